"""Command-line entry point: ``posthoc-ood <verb> ...``.

Exit codes: 0 success, 2 usage, 3 data/format error, 4 numerical failure.
Failures print a single ``error[<Class>] <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .datagen import SynthSpec, one_class_split, synth_dataset
from .errors import DataError, OODError, UsageError
from .fitstats import FitConfig, fit_all
from .metrics import EvalOutcome, calibrate, detect, evaluate
from .scores import REQUIREMENTS, check_score_name, score_batch


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"error[UsageError] {message}\n")


def _score_list(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise UsageError("--scores needs at least one score name")
    for n in names:
        check_score_name(n)
    return names


def _override(cfg: FitConfig, args) -> FitConfig:
    changes = {}
    if getattr(args, "principal_dim", None) is not None:
        changes["principal_dim"] = args.principal_dim
    if getattr(args, "shrink", None) is not None:
        changes["shrink"] = args.shrink
    if getattr(args, "react_p", None) is not None:
        changes["react_p"] = args.react_p
    return replace(cfg, **changes)


def _stats_header(stats, args) -> list[str]:
    lines = [
        f"alpha={'none' if stats.vim is None else repr(stats.vim.alpha)}",
        f"principal_dim={stats.subspace.principal_dim} feature_dim={stats.feature_dim} "
        f"num_classes={stats.num_classes}",
        f"react_clip={stats.react.clip_value!r} react_percentile={stats.react.percentile!r}",
    ]
    if args.stamp:
        lines.append(f"generated={_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}")
    return lines


def _require(names, split: io.SplitData, where: str) -> None:
    for name in names:
        need_x, need_l = REQUIREMENTS[name]
        if need_x and split.features is None:
            raise DataError(f"score '{name}' requires features, but manifest has no '{where}.features'")
        if need_l and split.logits is None:
            raise DataError(f"score '{name}' requires logits, but manifest has no '{where}.logits'")


def cmd_fit(args) -> int:
    data = io.load_manifest_data(io.read_manifest(args.manifest))
    cfg = _override(data.config, args)
    tr = data.id_train
    stats = fit_all(tr.features, tr.logits, tr.labels, data.head, cfg, num_classes=data.num_classes)
    io.save_stats(stats, args.out_stats)
    alpha = "none" if stats.vim is None else f"{stats.vim.alpha:.6g}"
    print(f"fit: n={tr.features.shape[0]} d={stats.feature_dim} C={stats.num_classes} "
          f"D={stats.subspace.principal_dim} alpha={alpha} -> {args.out_stats}")
    return 0


def _read_optional(path):
    return None if path is None else io.read_matrix(path)


def cmd_score(args) -> int:
    check_score_name(args.score)
    stats = io.load_stats(args.stats)
    scores = score_batch(args.score, _read_optional(args.features), _read_optional(args.logits), stats)
    io.write_scores(scores.values, args.out, args.score)
    print(f"score: {args.score} n={len(scores)} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    names = _score_list(args.scores)
    manifest = io.read_manifest(args.manifest)
    data = io.load_manifest_data(manifest)
    if data.id_test.features is None and data.id_test.logits is None:
        raise DataError("manifest has no 'id_test' split to evaluate")
    if not data.ood:
        raise DataError("manifest has no 'ood.<name>' sets to evaluate")
    _require(names, data.id_test, "id_test")
    for ood_name, split in data.ood.items():
        _require(names, split, f"ood.{ood_name}")
    stats = io.load_stats(args.stats)

    results = []
    curves_dir = Path(args.out_curves) if args.out_curves else None
    for name in names:
        id_scores = score_batch(name, data.id_test.features, data.id_test.logits, stats).values
        per_set = {"ID": id_scores}
        for ood_name, split in data.ood.items():
            ood_scores = score_batch(name, split.features, split.logits, stats).values
            per_set[ood_name] = ood_scores
            results.append((name, ood_name, evaluate(id_scores, ood_scores)))
        if curves_dir is not None:
            io.emit_curves(per_set, args.bins, curves_dir / f"{name}.csv")
    csv_path, txt_path = io.emit_report(results, args.out_report, _stats_header(stats, args))
    print(Path(txt_path).read_text(), end="")
    return 0


def _average(outcomes: list[EvalOutcome]) -> EvalOutcome:
    total_a = total_f = 0.0
    for o in outcomes:
        total_a += o.auroc
        total_f += o.fpr95
    return EvalOutcome(
        auroc=total_a / len(outcomes),
        fpr95=total_f / len(outcomes),
        n_id=outcomes[0].n_id,
        n_ood=sum(o.n_ood for o in outcomes),
    )


def cmd_oneclass(args) -> int:
    names = _score_list(args.scores)
    data = io.load_manifest_data(io.read_manifest(args.manifest))
    tr, te = data.id_train, data.id_test
    if te.labels is None:
        raise DataError("one-class protocol needs 'id_test.labels' in the manifest")
    _require(names, tr, "id_train")
    _require(names, te, "id_test")
    classes = [int(k) for k in np.unique(tr.labels)]
    test_classes = set(int(k) for k in np.unique(te.labels))
    if len(test_classes) < 2:
        raise DataError("one-class protocol needs at least 2 classes in id_test.labels")
    cfg = _override(data.config, args)
    stats_dir = Path(args.stats_dir)

    results = []
    task_lines = []
    for k in classes:
        if k not in test_classes:
            raise DataError(f"class {k} appears in id_train.labels but not in id_test.labels")
        rows = np.flatnonzero(tr.labels == k)
        pick = (lambda a: None if a is None else a[rows])
        stats = fit_all(pick(tr.features), pick(tr.logits), np.zeros(rows.size, dtype=np.int64),
                        data.head, cfg, num_classes=1)
        io.save_stats(stats, stats_dir / f"class_{k}")
        task = one_class_split(te.labels, k)
        task_lines.append(
            f"id_class={k} n_id={task.id_rows.size} n_ood={task.ood_rows.size} "
            f"id_rows={','.join(map(str, task.id_rows))}"
        )
        for name in names:
            s = score_batch(name, te.features, te.logits, stats).values
            id_scores = s[task.id_rows]
            per_ood = [
                evaluate(id_scores, s[task.ood_rows[te.labels[task.ood_rows] == j]])
                for j in sorted(test_classes - {k})
            ]
            results.append((name, str(k), _average(per_ood)))
    io.write_text("\n".join(task_lines) + "\n", stats_dir / "tasks.txt")

    header = [f"one-class protocol: {len(classes)} tasks, ID class vs each remaining class"]
    if args.stamp:
        header.append(f"generated={_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}")
    csv_path, txt_path = io.emit_oneclass_report(results, args.out_report, header)
    print(Path(txt_path).read_text(), end="")
    return 0


def cmd_calibrate(args) -> int:
    check_score_name(args.score)
    stats = io.load_stats(args.stats)
    eta = stats.config.eta if args.eta is None else args.eta
    s = score_batch(args.score, _read_optional(args.cal_features), _read_optional(args.cal_logits), stats)
    cal = calibrate(s.values, eta, score_name=args.score)
    io.write_calibration(cal, args.out)
    print(f"calibrate: {args.score} eta={eta!r} threshold={cal.threshold!r} -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    check_score_name(args.score)
    stats = io.load_stats(args.stats)
    cal = io.read_calibration(args.calibration)
    if cal.score_name and cal.score_name != args.score:
        raise UsageError(
            f"calibration was computed for score '{cal.score_name}', not '{args.score}'"
        )
    s = score_batch(args.score, _read_optional(args.features), _read_optional(args.logits), stats)
    flags = detect(s.values, cal)
    io.write_flags(s.values, flags, args.out, args.score)
    print(f"detect: {int(flags.sum())} of {flags.size} flagged as outliers -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(
        num_classes=args.num_classes,
        feature_dim=args.feature_dim,
        intrinsic_dim=args.intrinsic_dim,
        samples_per_class=args.samples_per_class,
        separation=args.separation,
        noise=args.noise,
        off_subspace_noise=args.off_noise,
        ood_shift=args.ood_shift,
        ood_off_noise=args.ood_off_noise,
        seed=args.seed,
    )
    data = synth_dataset(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def dump(split, prefix, labels=True) -> io.SplitPaths:
        sp = io.SplitPaths(
            features=io.write_matrix(split.features, out / f"{prefix}_features.fmat"),
            logits=io.write_matrix(split.logits, out / f"{prefix}_logits.fmat"),
        )
        if labels:
            sp.labels = io.write_labels(split.labels, out / f"{prefix}_labels.csv")
        return sp

    m = io.Manifest(
        id_train=dump(data.train, "train"),
        id_test=dump(data.test, "test"),
        head_w=io.write_matrix(data.head.weights, out / "head_W.fmat"),
        head_b=io.write_matrix(data.head.bias[None, :], out / "head_b.fmat"),
        ood={name: dump(split, f"ood_{name}", labels=False) for name, split in data.ood.items()},
        config=FitConfig(
            principal_dim=spec.intrinsic_dim if args.principal_dim is None else args.principal_dim
        ),
    )
    path = io.write_manifest(m, out / "manifest.txt")
    print(f"synth: seed={spec.seed} C={spec.num_classes} d={spec.feature_dim} -> {path}")
    return 0


def cmd_curves(args) -> int:
    scores = {}
    for item in args.input:
        if "=" not in item:
            raise UsageError(f"--input expects NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        scores[name] = io.read_scores(path)
    io.emit_curves(scores, args.bins, args.out)
    print(f"curves: {len(scores)} datasets, {args.bins} bins -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="posthoc-ood", description="Post-hoc OOD scoring, calibration and evaluation.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def fit_flags(sp):
        sp.add_argument("--principal-dim", type=int, help="principal subspace dimension D")
        sp.add_argument("--shrink", type=float, help="covariance eigenvalue floor ratio")
        sp.add_argument("--react-p", type=float, help="ReAct clip percentile")

    sp = sub.add_parser("fit", help="fit ID statistics from a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-stats", required=True)
    fit_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("score", help="score one feature/logit batch")
    sp.add_argument("--stats", required=True)
    sp.add_argument("--features")
    sp.add_argument("--logits")
    sp.add_argument("--score", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("eval", help="AUROC/FPR95 of scores on the manifest's ID test and OOD sets")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--stats", required=True)
    sp.add_argument("--scores", required=True, help="comma-separated score names")
    sp.add_argument("--out-report", required=True)
    sp.add_argument("--out-curves", help="directory for per-score distribution curves")
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--stamp", action="store_true", help="add a timestamp to the report header")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("oneclass", help="one-class protocol: each class in turn is ID")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--stats-dir", required=True)
    sp.add_argument("--scores", required=True)
    sp.add_argument("--out-report", required=True)
    sp.add_argument("--stamp", action="store_true")
    fit_flags(sp)
    sp.set_defaults(func=cmd_oneclass)

    sp = sub.add_parser("calibrate", help="threshold at the eta percentile of ID calibration scores")
    sp.add_argument("--stats", required=True)
    sp.add_argument("--cal-features")
    sp.add_argument("--cal-logits")
    sp.add_argument("--score", required=True)
    sp.add_argument("--eta", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("detect", help="flag samples scoring above a calibrated threshold")
    sp.add_argument("--stats", required=True)
    sp.add_argument("--calibration", required=True)
    sp.add_argument("--features")
    sp.add_argument("--logits")
    sp.add_argument("--score", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("synth", help="write a synthetic dataset and its manifest")
    d = SynthSpec()
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--num-classes", type=int, default=d.num_classes)
    sp.add_argument("--feature-dim", type=int, default=d.feature_dim)
    sp.add_argument("--intrinsic-dim", type=int, default=d.intrinsic_dim)
    sp.add_argument("--samples-per-class", type=int, default=d.samples_per_class)
    sp.add_argument("--separation", type=float, default=d.separation)
    sp.add_argument("--noise", type=float, default=d.noise)
    sp.add_argument("--off-noise", type=float, default=d.off_subspace_noise)
    sp.add_argument("--ood-shift", type=float, default=d.ood_shift)
    sp.add_argument("--ood-off-noise", type=float, default=d.ood_off_noise)
    sp.add_argument("--seed", type=int, default=d.seed)
    sp.add_argument("--principal-dim", type=int, help="config.D written to the manifest")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("curves", help="histogram csv from score files")
    sp.add_argument("--input", action="append", required=True, metavar="NAME=PATH")
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_curves)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OODError as exc:
        msg = " ".join(str(exc).split())
        print(f"error[{type(exc).__name__}] {msg}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
