import subprocess
import sys

import numpy as np
import pytest

from posthoc_ood import io
from posthoc_ood.cli import main
from posthoc_ood.errors import DataError, NumericalError, UsageError
from posthoc_ood.scores import SCORE_NAMES

ALL = ",".join(SCORE_NAMES)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out-dir", str(out), "--seed", "3"]) == 0
    return out


@pytest.fixture(scope="module")
def stats_dir(synth_dir):
    stats = synth_dir / "stats"
    assert main(["fit", "--manifest", str(synth_dir / "manifest.txt"), "--out-stats", str(stats),
                 "--react-p", "99"]) == 0
    return stats


def test_synth_writes_manifest(synth_dir):
    m = io.read_manifest(synth_dir / "manifest.txt")
    assert set(m.ood) == {"shifted", "off_subspace"}
    assert m.config.principal_dim == 8
    data = io.load_manifest_data(m)
    assert data.feature_dim == 16 and data.num_classes == 3


def test_large_margin_report(synth_dir, stats_dir, tmp_path, capsys):
    rc = main(["eval", "--manifest", str(synth_dir / "manifest.txt"), "--stats", str(stats_dir),
               "--scores", ALL, "--out-report", str(tmp_path / "report"),
               "--out-curves", str(tmp_path / "curves")])
    assert rc == 0
    rows = io.read_report_csv(tmp_path / "report.csv")
    shifted = {s: a for s, d, a, _ in rows if d == "shifted"}
    assert set(shifted) == set(SCORE_NAMES)
    assert all(a >= 99.00 for a in shifted.values()), shifted
    assert "AUROC" in capsys.readouterr().out
    for name in SCORE_NAMES:
        assert (tmp_path / "curves" / f"{name}.csv").exists()


def test_eval_missing_logits_names_requirement(synth_dir, stats_dir, tmp_path, capsys):
    text = (synth_dir / "manifest.txt").read_text()
    lines = [ln for ln in text.splitlines() if not ln.startswith("id_test.logits")]
    manifest = synth_dir / "no_logits.txt"
    manifest.write_text("\n".join(lines) + "\n")
    rc = main(["eval", "--manifest", str(manifest), "--stats", str(stats_dir), "--scores", "vim",
               "--out-report", str(tmp_path / "r")])
    err = capsys.readouterr().err
    assert rc == 3
    assert err.startswith("error[DataError]") and "id_test.logits" in err


def test_manifest_inconsistency_names_file(synth_dir, tmp_path, capsys):
    io.write_matrix(np.zeros((5, 4)), tmp_path / "bad.fmat")
    text = (synth_dir / "manifest.txt").read_text().replace(
        "id_test.features=test_features.fmat", f"id_test.features={tmp_path / 'bad.fmat'}")
    # relative paths resolve against the manifest, so keep it beside the data
    (synth_dir / "mismatch.txt").write_text(text)
    rc = main(["fit", "--manifest", str(synth_dir / "mismatch.txt"), "--out-stats", str(tmp_path / "s")])
    err = capsys.readouterr().err
    assert rc == 3 and "bad.fmat" in err and "id_test.features" in err


def test_score_calibrate_detect(synth_dir, stats_dir, tmp_path):
    feats, logits = synth_dir / "test_features.fmat", synth_dir / "test_logits.fmat"
    assert main(["score", "--stats", str(stats_dir), "--features", str(feats), "--logits", str(logits),
                 "--score", "vim", "--out", str(tmp_path / "s.csv")]) == 0
    assert io.read_scores(tmp_path / "s.csv").shape == (1002,)

    assert main(["calibrate", "--stats", str(stats_dir), "--cal-features", str(feats),
                 "--cal-logits", str(logits), "--score", "vim", "--out", str(tmp_path / "cal.txt")]) == 0
    cal = io.read_calibration(tmp_path / "cal.txt")
    assert cal.eta == 95.0 and cal.score_name == "vim"

    ood = synth_dir / "ood_shifted_features.fmat"
    assert main(["detect", "--stats", str(stats_dir), "--calibration", str(tmp_path / "cal.txt"),
                 "--features", str(ood), "--logits", str(synth_dir / "ood_shifted_logits.fmat"),
                 "--score", "vim", "--out", str(tmp_path / "flags.csv")]) == 0
    flags = io.read_matrix(tmp_path / "flags.csv")
    assert flags.shape == (1002, 2) and flags[:, 1].mean() > 0.9


def test_detect_rejects_score_mismatch(synth_dir, stats_dir, tmp_path, capsys):
    io.write_text("score=energy\neta=95.0\nthreshold=0.0\n", tmp_path / "cal.txt")
    rc = main(["detect", "--stats", str(stats_dir), "--calibration", str(tmp_path / "cal.txt"),
               "--logits", str(synth_dir / "test_logits.fmat"), "--score", "msp",
               "--out", str(tmp_path / "f.csv")])
    assert rc == 2 and "error[UsageError]" in capsys.readouterr().err


def test_curves_verb(synth_dir, stats_dir, tmp_path):
    io.write_scores(np.arange(1.0, 101.0), tmp_path / "a.csv", "x")
    assert main(["curves", "--input", f"a={tmp_path / 'a.csv'}", "--bins", "10",
                 "--out", str(tmp_path / "c.csv")]) == 0
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert [int(ln.split(",")[3]) for ln in lines[1:]] == [10] * 10


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["fit", "--bogus"],
    [],
])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert "error[UsageError]" in capsys.readouterr().err


def test_unsupported_score(synth_dir, stats_dir, tmp_path, capsys):
    rc = main(["score", "--stats", str(stats_dir), "--logits", str(synth_dir / "test_logits.fmat"),
               "--score", "odin", "--out", str(tmp_path / "s.csv")])
    assert rc == 2 and "odin" in capsys.readouterr().err


def test_exit_codes():
    assert (UsageError.exit_code, DataError.exit_code, NumericalError.exit_code) == (2, 3, 4)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "posthoc_ood", "score", "--stats", str(tmp_path / "none"),
                           "--score", "msp", "--out", str(tmp_path / "x")],
                          capture_output=True, text=True)
    assert proc.returncode == 3
    assert proc.stderr.startswith("error[DataError]")
    assert len(proc.stderr.strip().splitlines()) == 1
