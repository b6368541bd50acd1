"""On-disk formats: matrices, manifests, fitted statistics, reports, curves.

Matrix files come in two flavours, told apart by their magic bytes:

* ``fmat``: ``b"FMAT1\\n"``, uint32 LE rows, uint32 LE cols, then rows*cols
  float32 LE values in row-major order.
* ``fmat`` double: same layout with magic ``b"FMATD\\n"`` and float64
  values. Used for fitted statistics so a save/load cycle is lossless.
* ``csv``: comma-separated decimals, one row per line, optionally preceded
  by a single header line starting with ``#``.

Every writer goes through a temp file and an atomic rename.
"""

from __future__ import annotations

import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError
from .fitstats import (
    ClassStats,
    FitConfig,
    IdStats,
    KlTemplates,
    LinearHead,
    PrincipalSubspace,
    ReactParams,
    VimParams,
)
from .metrics import FPR95_CONVENTION, CalibrationResult, EvalOutcome

FMAT_MAGIC = b"FMAT1\n"
FMAT64_MAGIC = b"FMATD\n"
_HEADER = struct.Struct("<II")
MAX_DIM = 2**31
STATS_FORMAT_VERSION = 1


# -- low level -----------------------------------------------------------

@contextmanager
def _atomic(path, mode="w"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(text: str, path) -> Path:
    """Atomically replace ``path`` with ``text``."""
    with _atomic(path, "w") as fh:
        fh.write(text)
    return Path(path)


def _format_of(path) -> str:
    return "fmat" if Path(path).suffix.lower() == ".fmat" else "csv"


def write_matrix(matrix, path, fmt: Optional[str] = None, double: bool = False) -> Path:
    """Write a 2-D array (1-D arrays become a single column).

    ``fmt`` defaults from the extension: ``.fmat`` -> fmat, else csv.
    ``double`` selects the float64 fmat flavour.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise DataError(f"can only write 2-D matrices, got shape {M.shape}")
    fmt = fmt or _format_of(path)
    if fmt == "fmat":
        magic, dtype = (FMAT64_MAGIC, "<f8") if double else (FMAT_MAGIC, "<f4")
        with _atomic(path, "wb") as fh:
            fh.write(magic)
            fh.write(_HEADER.pack(*M.shape))
            fh.write(np.ascontiguousarray(M, dtype=dtype).tobytes())
    elif fmt == "csv":
        with _atomic(path, "w") as fh:
            for row in M:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise DataError(f"unknown matrix format '{fmt}'")
    return Path(path)


def _read_fmat(path: Path, blob: bytes) -> np.ndarray:
    magic = blob[:6]
    dtype = "<f4" if magic == FMAT_MAGIC else "<f8"
    head_end = 6 + _HEADER.size
    if len(blob) < head_end:
        raise DataError(
            f"{path}: truncated fmat header: expected {head_end} bytes, file has {len(blob)}"
        )
    rows, cols = _HEADER.unpack_from(blob, 6)
    if rows >= MAX_DIM or cols >= MAX_DIM or rows * cols >= MAX_DIM:
        raise DataError(f"{path}: dimension overflow at byte 6: {rows} x {cols}")
    expected = head_end + rows * cols * np.dtype(dtype).itemsize
    if len(blob) < expected:
        raise DataError(
            f"{path}: truncated fmat: {rows} x {cols} needs {expected} bytes, file has {len(blob)}"
        )
    if len(blob) > expected:
        raise DataError(
            f"{path}: {len(blob) - expected} trailing bytes after byte {expected}"
        )
    data = np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=head_end)
    return data.astype(np.float64).reshape(rows, cols)


def _read_csv(path: Path, text: str) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if lineno == 1 and line.startswith("#"):
            continue
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            row = [float(c) for c in cells]
        except ValueError:
            bad = next(i for i, c in enumerate(cells) if not _is_float(c))
            raise DataError(
                f"{path}: line {lineno}, column {bad + 1}: non-numeric cell {cells[bad].strip()!r}"
            ) from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError(f"{path}: line {lineno} has {len(row)} cells, expected {width}")
        rows.append(row)
    if not rows:
        return np.zeros((0, 0))
    return np.asarray(rows, dtype=np.float64)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_matrix(path) -> np.ndarray:
    """Read an fmat or csv matrix (detected from the magic bytes) as float64."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if blob[:6] in (FMAT_MAGIC, FMAT64_MAGIC):
        return _read_fmat(path, blob)
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not fmat and not utf-8 text (byte {exc.start})") from None
    return _read_csv(path, text)


def read_labels(path) -> np.ndarray:
    M = read_matrix(path)
    if M.ndim != 2 or (M.size and M.shape[1] != 1):
        raise DataError(f"{path}: labels must be a single column, got shape {M.shape}")
    v = M.reshape(-1)
    if np.any(v != np.round(v)) or np.any(v < 0):
        raise DataError(f"{path}: labels must be non-negative integers")
    return v.astype(np.int64)


def write_labels(labels, path) -> Path:
    lab = np.asarray(labels).reshape(-1)
    with _atomic(path, "w") as fh:
        fh.write("# label\n")
        fh.writelines(f"{int(v)}\n" for v in lab)
    return Path(path)


def _read_kv(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}: line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise DataError(f"{path}: line {lineno}: duplicate key '{key}'")
        out[key] = value.strip()
    return out


def _write_kv(path, items: Iterable[tuple[str, object]], header: Sequence[str] = ()) -> Path:
    with _atomic(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for key, value in items:
            fh.write(f"{key}={value}\n")
    return Path(path)


def _float_repr(x: float) -> str:
    return repr(float(x))


# -- scores, calibration, flags -----------------------------------------

def write_scores(values, path, score_name: str) -> Path:
    with _atomic(path, "w") as fh:
        fh.write(f"# score={score_name}\n")
        fh.writelines(f"{v!r}\n" for v in map(float, np.asarray(values).reshape(-1)))
    return Path(path)


def read_scores(path) -> np.ndarray:
    M = read_matrix(path)
    if M.size and M.shape[1] != 1:
        raise DataError(f"{path}: score file must have a single column, got {M.shape[1]}")
    return M.reshape(-1)


def write_calibration(cal: CalibrationResult, path) -> Path:
    return _write_kv(path, [
        ("score", cal.score_name),
        ("eta", _float_repr(cal.eta)),
        ("threshold", _float_repr(cal.threshold)),
    ])


def read_calibration(path) -> CalibrationResult:
    kv = _read_kv(path)
    try:
        return CalibrationResult(
            threshold=float(kv["threshold"]), eta=float(kv["eta"]), score_name=kv.get("score", "")
        )
    except KeyError as exc:
        raise DataError(f"{path}: calibration file missing '{exc.args[0]}'") from None
    except ValueError as exc:
        raise DataError(f"{path}: bad calibration value: {exc}") from None


def write_flags(scores, flags, path, score_name: str) -> Path:
    with _atomic(path, "w") as fh:
        fh.write(f"# score={score_name},outlier\n")
        for s, f in zip(np.asarray(scores).reshape(-1), np.asarray(flags).reshape(-1)):
            fh.write(f"{float(s)!r},{int(bool(f))}\n")
    return Path(path)


# -- manifest ------------------------------------------------------------

@dataclass
class SplitPaths:
    features: Optional[Path] = None
    logits: Optional[Path] = None
    labels: Optional[Path] = None


@dataclass
class Manifest:
    """Paths of every input plus fit/calibration config. Relative paths are
    resolved against the manifest's directory."""

    id_train: SplitPaths = field(default_factory=SplitPaths)
    id_test: SplitPaths = field(default_factory=SplitPaths)
    head_w: Optional[Path] = None
    head_b: Optional[Path] = None
    ood: dict[str, SplitPaths] = field(default_factory=dict)
    config: FitConfig = field(default_factory=FitConfig)
    source: Optional[Path] = None


_SPLIT_FIELDS = ("features", "logits", "labels")


def read_manifest(path) -> Manifest:
    path = Path(path)
    kv = _read_kv(path)
    base = path.parent
    m = Manifest(source=path)
    cfg = {}
    for key, value in kv.items():
        parts = key.split(".")
        if parts[0] in ("id_train", "id_test") and len(parts) == 2 and parts[1] in _SPLIT_FIELDS:
            setattr(getattr(m, parts[0]), parts[1], base / value)
        elif parts[0] == "head" and len(parts) == 2 and parts[1] in ("W", "b"):
            setattr(m, f"head_{parts[1].lower()}", base / value)
        elif parts[0] == "ood" and len(parts) == 3 and parts[2] in ("features", "logits"):
            setattr(m.ood.setdefault(parts[1], SplitPaths()), parts[2], base / value)
        elif parts[0] == "config" and len(parts) == 2 and parts[1] in ("D", "shrink", "react_p", "eta"):
            try:
                cfg[parts[1]] = int(value) if parts[1] == "D" else float(value)
            except ValueError:
                raise DataError(f"{path}: field '{key}' has non-numeric value {value!r}") from None
        else:
            raise DataError(f"{path}: unknown manifest key '{key}'")
    if (m.head_w is None) != (m.head_b is None):
        raise DataError(f"{path}: head needs both 'head.W' and 'head.b'")
    m.config = FitConfig(
        principal_dim=cfg.get("D"),
        shrink=cfg.get("shrink", FitConfig.shrink),
        react_p=cfg.get("react_p", FitConfig.react_p),
        eta=cfg.get("eta", FitConfig.eta),
    )
    return m


def write_manifest(m: Manifest, path) -> Path:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path) -> str:
        try:
            return str(Path(p).resolve().relative_to(base))
        except ValueError:
            return str(Path(p).resolve())

    items = []
    for split in ("id_train", "id_test"):
        sp = getattr(m, split)
        for f in _SPLIT_FIELDS:
            if getattr(sp, f) is not None:
                items.append((f"{split}.{f}", rel(getattr(sp, f))))
    if m.head_w is not None:
        items += [("head.W", rel(m.head_w)), ("head.b", rel(m.head_b))]
    for name, sp in m.ood.items():
        for f in ("features", "logits"):
            if getattr(sp, f) is not None:
                items.append((f"ood.{name}.{f}", rel(getattr(sp, f))))
    cfg = m.config
    if cfg.principal_dim is not None:
        items.append(("config.D", cfg.principal_dim))
    items += [
        ("config.shrink", _float_repr(cfg.shrink)),
        ("config.react_p", _float_repr(cfg.react_p)),
        ("config.eta", _float_repr(cfg.eta)),
    ]
    return _write_kv(path, items)


@dataclass
class SplitData:
    features: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None


@dataclass
class ManifestData:
    id_train: SplitData
    id_test: SplitData
    head: Optional[LinearHead]
    ood: dict[str, SplitData]
    config: FitConfig
    feature_dim: int
    num_classes: Optional[int]


def load_manifest_data(m: Manifest) -> ManifestData:
    """Read every file the manifest names and check that they agree on the
    feature dimension, class count, and row counts."""
    dims: dict[str, tuple[str, int]] = {}

    def agree(kind: str, value: int, where: str):
        if kind in dims and dims[kind][1] != value:
            first, v0 = dims[kind]
            raise DataError(f"{where}: {kind} = {value} disagrees with {first} ({kind} = {v0})")
        dims.setdefault(kind, (where, value))

    def load(sp: SplitPaths, name: str) -> SplitData:
        out = SplitData()
        if sp.features is not None:
            out.features = read_matrix(sp.features)
            agree("feature_dim", out.features.shape[1], f"{sp.features} ({name}.features)")
        if sp.logits is not None:
            out.logits = read_matrix(sp.logits)
            agree("num_classes", out.logits.shape[1], f"{sp.logits} ({name}.logits)")
        if sp.labels is not None:
            out.labels = read_labels(sp.labels)
        rows = {f: getattr(out, f).shape[0] for f in _SPLIT_FIELDS if getattr(out, f) is not None}
        if len(set(rows.values())) > 1:
            raise DataError(f"{name}: row counts disagree across files: {rows}")
        return out

    if m.id_train.features is None:
        raise DataError("manifest is missing 'id_train.features'")
    if m.id_train.labels is None:
        raise DataError("manifest is missing 'id_train.labels'")
    train = load(m.id_train, "id_train")
    test = load(m.id_test, "id_test")
    ood = {name: load(sp, f"ood.{name}") for name, sp in m.ood.items()}
    head = None
    if m.head_w is not None:
        W = read_matrix(m.head_w)
        b = read_matrix(m.head_b).reshape(-1)
        agree("feature_dim", W.shape[1], f"{m.head_w} (head.W columns)")
        agree("num_classes", W.shape[0], f"{m.head_w} (head.W rows)")
        agree("num_classes", b.shape[0], f"{m.head_b} (head.b length)")
        head = LinearHead(weights=W, bias=b)
    C = dims.get("num_classes", (None, None))[1]
    if C is not None and train.labels is not None and train.labels.size and train.labels.max() >= C:
        raise DataError(
            f"{m.id_train.labels} (id_train.labels): label {int(train.labels.max())} >= num_classes {C}"
        )
    return ManifestData(
        id_train=train, id_test=test, head=head, ood=ood, config=m.config,
        feature_dim=dims["feature_dim"][1], num_classes=C,
    )


# -- fitted statistics ---------------------------------------------------

_STATS_MATRICES = {
    "centroids": "centroids.fmat",
    "shared_precision": "shared_precision.fmat",
    "origin": "origin.fmat",
    "residual_basis": "residual_basis.fmat",
}


def save_stats(stats: IdStats, path) -> Path:
    """Write fitted statistics to directory ``path`` (float64 fmat files plus
    ``metadata.txt``)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cs, sub = stats.class_stats, stats.subspace
    write_matrix(cs.centroids, path / "centroids.fmat", double=True)
    write_matrix(cs.shared_precision, path / "shared_precision.fmat", double=True)
    write_matrix(sub.origin[None, :], path / "origin.fmat", double=True)
    write_matrix(sub.residual_basis, path / "residual_basis.fmat", double=True)
    if stats.kl is not None:
        write_matrix(stats.kl.class_dists, path / "kl_templates.fmat", double=True)
    if stats.head is not None:
        write_matrix(stats.head.weights, path / "head_weights.fmat", double=True)
        write_matrix(stats.head.bias[None, :], path / "head_bias.fmat", double=True)
    cfg = stats.config
    _write_kv(path / "metadata.txt", [
        ("format_version", STATS_FORMAT_VERSION),
        ("num_classes", stats.num_classes),
        ("feature_dim", stats.feature_dim),
        ("principal_dim", sub.principal_dim),
        ("alpha", "none" if stats.vim is None else _float_repr(stats.vim.alpha)),
        ("react_clip", _float_repr(stats.react.clip_value)),
        ("react_percentile", _float_repr(stats.react.percentile)),
        ("shrink", _float_repr(cfg.shrink)),
        ("eta", _float_repr(cfg.eta)),
        ("class_counts", ",".join(str(int(c)) for c in cs.class_counts)),
        ("kl_templates", "true" if stats.kl is not None else "false"),
        ("head", "true" if stats.head is not None else "false"),
    ])
    return path


def load_stats(path) -> IdStats:
    path = Path(path)
    meta_path = path / "metadata.txt"
    if not meta_path.exists():
        raise DataError(f"{path}: missing stats component 'metadata' ({meta_path.name})")
    meta = _read_kv(meta_path)
    version = meta.get("format_version")
    if version != str(STATS_FORMAT_VERSION):
        raise DataError(
            f"{meta_path}: stats format version {version} does not match supported version "
            f"{STATS_FORMAT_VERSION}"
        )

    def component(name: str, filename: str) -> np.ndarray:
        p = path / filename
        if not p.exists():
            raise DataError(f"{path}: missing stats component '{name}' ({filename})")
        return read_matrix(p)

    try:
        d = int(meta["feature_dim"])
        C = int(meta["num_classes"])
        D = int(meta["principal_dim"])
        counts = np.array([int(c) for c in meta["class_counts"].split(",")], dtype=np.int64)
        react = ReactParams(float(meta["react_clip"]), float(meta["react_percentile"]))
        shrink, eta = float(meta["shrink"]), float(meta["eta"])
        alpha = None if meta["alpha"] == "none" else float(meta["alpha"])
        has_kl = meta["kl_templates"] == "true"
        has_head = meta["head"] == "true"
    except KeyError as exc:
        raise DataError(f"{meta_path}: missing metadata field '{exc.args[0]}'") from None
    except ValueError as exc:
        raise DataError(f"{meta_path}: bad metadata value: {exc}") from None

    centroids = component("centroids", "centroids.fmat")
    precision = component("shared_precision", "shared_precision.fmat")
    origin = component("origin", "origin.fmat").reshape(-1)
    R = component("residual_basis", "residual_basis.fmat")
    if R.shape != (d, d - D) or origin.shape[0] != d or centroids.shape[1] != d:
        raise DataError(f"{path}: stored matrices disagree with feature_dim={d}, principal_dim={D}")
    subspace = PrincipalSubspace(origin=origin, residual_basis=R, principal_dim=D)
    kl = KlTemplates(component("kl_templates", "kl_templates.fmat")) if has_kl else None
    head = None
    if has_head:
        head = LinearHead(
            weights=component("head_weights", "head_weights.fmat"),
            bias=component("head_bias", "head_bias.fmat").reshape(-1),
        )
    return IdStats(
        class_stats=ClassStats(centroids=centroids, shared_precision=precision, class_counts=counts),
        subspace=subspace,
        react=react,
        vim=None if alpha is None else VimParams(alpha=alpha, subspace=subspace),
        kl=kl,
        head=head,
        num_classes=C,
        feature_dim=d,
        config=FitConfig(principal_dim=D, shrink=shrink, react_p=react.percentile, eta=eta),
    )


# -- reports -------------------------------------------------------------

def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _report_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix.lower() in (".csv", ".txt") else path
    return stem.with_suffix(".csv"), stem.with_suffix(".txt")


def _ordered(items: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(items))


def _mean(values: Sequence[float]) -> float:
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def _grid(results) -> tuple[list[str], list[str], dict]:
    if not results:
        raise DataError("report needs at least one result")
    rows = _ordered(r[0] for r in results)
    cols = _ordered(str(r[1]) for r in results)
    cells = {(s, str(c)): o for s, c, o in results}
    missing = [(s, c) for s in rows for c in cols if (s, c) not in cells]
    if missing:
        raise DataError(f"report grid is incomplete, missing {missing[0]}")
    return rows, cols, cells


def _text_table(title_col: str, rows, groups, cells_fn, header_lines) -> list[str]:
    """Rows of names, column groups of (label, [subcolumn names]); cells_fn
    returns the formatted strings for one (row, group)."""
    name_w = max(len(title_col), *(len(r) for r in rows))
    widths = []
    for label, subs in groups:
        w = max(7, *(len(s) for s in subs))
        widths.append(max(w * len(subs) + 2 * (len(subs) - 1), len(label)))
    out = [f"# {h}" for h in header_lines]
    line1 = title_col.ljust(name_w) + " | " + " | ".join(
        label.center(w) for (label, _), w in zip(groups, widths))
    line2 = " " * name_w + " | " + " | ".join(
        "  ".join(s.rjust((w - 2 * (len(subs) - 1)) // len(subs)) for s in subs).rjust(w)
        for (_, subs), w in zip(groups, widths))
    out += [line1, line2, "-" * len(line1)]
    for r in rows:
        cells = []
        for (label, subs), w in zip(groups, widths):
            vals = cells_fn(r, label)
            sub_w = (w - 2 * (len(subs) - 1)) // len(subs)
            cells.append("  ".join(v.rjust(sub_w) for v in vals).rjust(w))
        out.append(r.ljust(name_w) + " | " + " | ".join(cells))
    return out


def emit_report(results: Sequence[tuple[str, str, EvalOutcome]], path,
                header: Sequence[str] = ()) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (score,dataset,auroc_pct,fpr95_pct, with one
    trailing Average row per score) and an aligned ``<stem>.txt`` table:
    scores as rows, one AUROC/FPR95 column pair per dataset plus Average."""
    rows, cols, cells = _grid(results)
    avg = {
        s: (_mean([cells[s, c].auroc for c in cols]), _mean([cells[s, c].fpr95 for c in cols]))
        for s in rows
    }
    csv_path, txt_path = _report_paths(path)
    with _atomic(csv_path, "w") as fh:
        fh.write("score,dataset,auroc_pct,fpr95_pct\n")
        for s in rows:
            for c in cols:
                fh.write(f"{s},{c},{_pct(cells[s, c].auroc)},{_pct(cells[s, c].fpr95)}\n")
            fh.write(f"{s},Average,{_pct(avg[s][0])},{_pct(avg[s][1])}\n")

    def cell(s, c):
        if c == "Average":
            return [_pct(avg[s][0]), _pct(avg[s][1])]
        return [_pct(cells[s, c].auroc), _pct(cells[s, c].fpr95)]

    groups = [(c, ["AUROC", "FPR95"]) for c in cols] + [("Average", ["AUROC", "FPR95"])]
    lines = _text_table("Score", rows, groups, cell,
                        list(header) + ["metrics in percent; " + FPR95_CONVENTION])
    with _atomic(txt_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return csv_path, txt_path


def emit_oneclass_report(results: Sequence[tuple[str, str, EvalOutcome]], path,
                         header: Sequence[str] = ()) -> tuple[Path, Path]:
    """One-class layout: ``results`` holds (score, id_class, outcome) where
    each outcome is already averaged over that task's OOD classes.

    The csv has rows score,id_class,auroc_pct,fpr95_pct plus an Average row
    per score; the text file has an AUROC table and an FPR95 table, each with
    ID classes as columns and a trailing Average column.
    """
    rows, cols, cells = _grid(results)
    avg = {
        s: (_mean([cells[s, c].auroc for c in cols]), _mean([cells[s, c].fpr95 for c in cols]))
        for s in rows
    }
    csv_path, txt_path = _report_paths(path)
    with _atomic(csv_path, "w") as fh:
        fh.write("score,id_class,auroc_pct,fpr95_pct\n")
        for s in rows:
            for c in cols:
                fh.write(f"{s},{c},{_pct(cells[s, c].auroc)},{_pct(cells[s, c].fpr95)}\n")
            fh.write(f"{s},Average,{_pct(avg[s][0])},{_pct(avg[s][1])}\n")

    lines = [f"# {h}" for h in header]
    lines.append(f"# {len(cols)} one-class tasks; each cell averages over the task's OOD classes")
    lines.append("# metrics in percent; " + FPR95_CONVENTION)
    for metric, idx in (("AUROC", 0), ("FPR95", 1)):
        def cell(s, c, idx=idx):
            if c == "Average":
                return [_pct(avg[s][idx])]
            o = cells[s, c]
            return [_pct(o.auroc if idx == 0 else o.fpr95)]
        groups = [(c, [c]) for c in cols] + [("Average", ["Average"])]
        lines.append("")
        lines.append(f"[{metric}]  ID class ->")
        table = _text_table("Score", rows, groups, cell, ())
        lines.extend(table[:1] + table[2:])
    with _atomic(txt_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return csv_path, txt_path


def read_report_csv(path) -> list[tuple[str, str, float, float]]:
    lines = Path(path).read_text().splitlines()
    out = []
    for line in lines[1:]:
        s, c, a, f = line.split(",")
        out.append((s, c, float(a), float(f)))
    return out


def histogram_curves(scores_by_dataset: dict, bins: int):
    """Shared-edge histograms. Returns (edges, {dataset: (counts, density)})."""
    if bins < 2:
        raise DataError(f"bins must be >= 2, got {bins}")
    arrays = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in scores_by_dataset.items()}
    if not arrays or any(a.size == 0 for a in arrays.values()):
        raise DataError("every dataset needs at least one score")
    pooled = np.concatenate(list(arrays.values()))
    if not np.all(np.isfinite(pooled)):
        raise DataError("scores contain non-finite values")
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi == lo:
        hi = lo + 1e-9 * max(1.0, abs(lo))
    edges = np.linspace(lo, hi, bins + 1)
    widths = np.diff(edges)
    out = {}
    for name, a in arrays.items():
        counts, _ = np.histogram(a, bins=edges)
        out[name] = (counts, counts / (a.size * widths))
    return edges, out


def emit_curves(scores_by_dataset: dict, bins: int, path) -> Path:
    """csv rows (dataset, bin_left, bin_right, count, density) over bin edges
    shared by all datasets."""
    edges, hist = histogram_curves(scores_by_dataset, bins)
    with _atomic(path, "w") as fh:
        fh.write("dataset,bin_left,bin_right,count,density\n")
        for name, (counts, density) in hist.items():
            for i in range(bins):
                fh.write(f"{name},{float(edges[i])!r},{float(edges[i + 1])!r},{int(counts[i])},{float(density[i])!r}\n")
    return Path(path)
