"""Temporal instances, datasets on disk, and a synthetic weakly-labeled generator."""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPLITS = ("train", "valid", "test")


class DataError(ValueError):
    """Malformed or inconsistent dataset contents."""


@dataclass(frozen=True)
class TemporalInstance:
    id: str
    values: np.ndarray  # D x T

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(f"instance {self.id!r}: values must be a non-empty D x T matrix, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError(f"instance {self.id!r}: values contain NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d_vars(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class Dataset:
    instances: list  # TemporalInstance
    labels: list  # int in {0, 1}
    point_labels: list | None = None  # per instance: np.ndarray or None
    split_tag: str = "train"
    normalization: dict | None = None

    def __post_init__(self):
        if self.split_tag not in SPLITS:
            raise DataError(f"split_tag must be one of {SPLITS}, got {self.split_tag!r}")
        if len(self.labels) != len(self.instances):
            raise DataError("labels and instances differ in length")
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise DataError("instance ids are not unique")
        dims = {inst.d_vars for inst in self.instances}
        if len(dims) > 1:
            raise DataError(f"instances have inconsistent dimensionality: {sorted(dims)}")
        for inst, y in zip(self.instances, self.labels):
            if y not in (0, 1):
                raise DataError(f"instance {inst.id!r}: label {y!r} is not binary")
        if self.point_labels is not None:
            if len(self.point_labels) != len(self.instances):
                raise DataError("point_labels and instances differ in length")
            for inst, y, pl in zip(self.instances, self.labels, self.point_labels):
                if pl is None:
                    continue
                if len(pl) != inst.length:
                    raise DataError(f"instance {inst.id!r}: point labels have length {len(pl)}, expected {inst.length}")
                if int(np.max(pl)) != y:
                    raise DataError(
                        f"instance {inst.id!r}: point labels imply instance label {int(np.max(pl))} but label is {y}"
                    )

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def d_vars(self) -> int | None:
        return self.instances[0].d_vars if self.instances else None

    def has_point_labels(self) -> bool:
        return self.point_labels is not None and all(p is not None for p in self.point_labels)


def split_stream(stream: TemporalInstance, chunk_length: int) -> list:
    """Cut a stream into consecutive chunks of ``chunk_length``; drop the remainder."""
    if chunk_length < 1:
        raise ValueError(f"chunk_length must be >= 1, got {chunk_length}")
    n = stream.length // chunk_length
    return [
        TemporalInstance(f"{stream.id}_{i}", stream.values[:, i * chunk_length : (i + 1) * chunk_length])
        for i in range(n)
    ]


# -- normalization --------------------------------------------------------------

def fit_normalization(dataset: Dataset) -> dict:
    """Per-variable mean and std over every point of every instance."""
    X = np.concatenate([inst.values for inst in dataset.instances], axis=1)
    std = X.std(axis=1)
    std[std == 0] = 1.0
    return {"mean": X.mean(axis=1).tolist(), "std": std.tolist()}


def apply_normalization(values: np.ndarray, stats: dict | None) -> np.ndarray:
    if stats is None:
        return values
    mean = np.asarray(stats["mean"])[:, None]
    std = np.asarray(stats["std"])[:, None]
    return (values - mean) / std


def normalized(dataset: Dataset, stats: dict | None) -> Dataset:
    if stats is None:
        return dataset
    return Dataset(
        [TemporalInstance(i.id, apply_normalization(i.values, stats)) for i in dataset.instances],
        list(dataset.labels),
        dataset.point_labels,
        dataset.split_tag,
        stats,
    )


# -- disk format ----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(dataset: Dataset, root, normalization: dict | None = None) -> None:
    root = Path(root)
    (root / "instances").mkdir(parents=True, exist_ok=True)
    for inst in dataset.instances:
        with open(root / "instances" / f"{inst.id}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t"] + [f"f{j}" for j in range(inst.d_vars)])
            for t in range(inst.length):
                w.writerow([t] + [_fmt(v) for v in inst.values[:, t]])
    with open(root / "labels.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "label"])
        for inst, y in zip(dataset.instances, dataset.labels):
            w.writerow([inst.id, int(y)])
    if dataset.point_labels is not None:
        (root / "point_labels").mkdir(exist_ok=True)
        for inst, pl in zip(dataset.instances, dataset.point_labels):
            if pl is None:
                continue
            with open(root / "point_labels" / f"{inst.id}.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["t", "label"])
                for t, v in enumerate(pl):
                    w.writerow([t, int(v)])
    stats = normalization if normalization is not None else dataset.normalization
    manifest = {
        "D": dataset.d_vars,
        "T": sorted({inst.length for inst in dataset.instances}),
        "split": dataset.split_tag,
        "n_instances": len(dataset),
        "normalization": stats,
    }
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)


def _read_instance(path: Path) -> np.ndarray:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "t" or header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
            raise DataError(f"{path}: bad header {header!r}, expected t,f0,f1,...")
        if len(header) < 2:
            raise DataError(f"{path}: no value columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}, row {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                t = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as e:
                raise DataError(f"{path}, row {lineno}: {e}") from None
            if t != lineno - 2:
                raise DataError(f"{path}, row {lineno}: t={t} is not consecutive from 0")
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}, row {lineno}: NaN or Inf value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64).T


def _read_binary_column(path: Path, key_col: str, val_col: str) -> list:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != [key_col, val_col]:
            raise DataError(f"{path}: bad header {reader.fieldnames!r}, expected {key_col},{val_col}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            v = row[val_col].strip()
            if v not in ("0", "1"):
                raise DataError(f"{path}, row {lineno}: label {v!r} is not binary")
            out.append((row[key_col], int(v)))
    return out


def load_dataset(root, split_tag: str | None = None) -> Dataset:
    """Read a dataset directory; instances come back ordered by id."""
    root = Path(root)
    labels_path = root / "labels.csv"
    if not labels_path.is_file():
        raise DataError(f"missing labels file: {labels_path}")
    manifest = {}
    if (root / "manifest.json").is_file():
        with open(root / "manifest.json") as f:
            manifest = json.load(f)
    labels = dict(_read_binary_column(labels_path, "id", "label"))
    inst_dir = root / "instances"
    files = sorted(inst_dir.glob("*.csv")) if inst_dir.is_dir() else []
    found = {p.stem for p in files}
    missing = sorted(set(labels) - found)
    if missing:
        raise DataError(f"{labels_path}: no instance file for ids {missing[:5]}")
    extra = sorted(found - set(labels))
    if extra:
        raise DataError(f"{labels_path}: no label for instance files {extra[:5]}")
    instances, ys, pls = [], [], []
    d = None
    for p in sorted(files, key=lambda q: q.stem):
        values = _read_instance(p)
        if d is None:
            d = values.shape[0]
        elif values.shape[0] != d:
            raise DataError(f"{p}: dimension mismatch, has D={values.shape[0]} but earlier instances have D={d}")
        instances.append(TemporalInstance(p.stem, values))
        ys.append(labels[p.stem])
        pl_path = root / "point_labels" / f"{p.stem}.csv"
        if pl_path.is_file():
            pl = np.array([v for _, v in _read_binary_column(pl_path, "t", "label")], dtype=np.int64)
            if len(pl) != values.shape[1]:
                raise DataError(f"{pl_path}: {len(pl)} rows but instance has T={values.shape[1]}")
            if int(pl.max()) != labels[p.stem]:
                raise DataError(
                    f"{pl_path}: point labels imply instance label {int(pl.max())}, labels.csv says {labels[p.stem]}"
                )
            pls.append(pl)
        else:
            pls.append(None)
    tag = split_tag or manifest.get("split") or "train"
    return Dataset(
        instances,
        ys,
        pls if any(p is not None for p in pls) else None,
        tag,
        manifest.get("normalization"),
    )


# -- synthetic data -------------------------------------------------------------

ANOMALY_KINDS = ("mean_shift", "amplitude", "frequency")


@dataclass
class SynthConfig:
    n_instances: int = 100
    d_vars: int = 3
    length: int = 500
    anomaly_ratio: float = 0.05
    min_segment_length: int = 20
    max_segment_length: int = 40
    max_segments: int = 3
    n_anomalous: int | None = None
    noise_std: float = 0.1
    offset_std: float = 0.1
    amplitude_range: tuple = (0.8, 1.2)
    period_range: tuple = (20.0, 60.0)
    shift_range: tuple = (1.5, 3.0)
    scale_range: tuple = (2.5, 4.0)
    freq_factor_range: tuple = (3.0, 5.0)

    def validate(self) -> None:
        for name in ("n_instances", "d_vars", "length", "min_segment_length", "max_segment_length", "max_segments"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"synth.{name} must be a positive integer, got {getattr(self, name)}")
        if not 0.0 < self.anomaly_ratio < 1.0:
            raise ValueError(f"synth.anomaly_ratio must be in (0, 1), got {self.anomaly_ratio}")
        if self.min_segment_length > self.max_segment_length:
            raise ValueError("synth.min_segment_length exceeds synth.max_segment_length")
        if self.max_segment_length > self.length:
            raise ValueError(
                f"infeasible config: max_segment_length={self.max_segment_length} > length={self.length}"
            )
        if self.n_anomalous is not None and not 0 <= self.n_anomalous <= self.n_instances:
            raise ValueError(f"synth.n_anomalous must be in [0, n_instances], got {self.n_anomalous}")
        if self.noise_std < 0:
            raise ValueError("synth.noise_std must be >= 0")

    def anomalous_count(self) -> int:
        if self.n_anomalous is not None:
            return self.n_anomalous
        segs = (1 + min(self.max_segments, 3)) / 2.0
        seg_len = (self.min_segment_length + self.max_segment_length) / 2.0
        per_instance = min(segs * seg_len, self.length)
        n = round(self.anomaly_ratio * self.n_instances * self.length / per_instance)
        return int(min(max(n, 0), self.n_instances))


def _place_segments(rng, T, n_segs, lo, hi):
    """Non-overlapping [start, end) ranges with at least one normal point between them."""
    for _ in range(100):
        lengths = rng.integers(lo, hi + 1, size=n_segs)
        slack = T - int(lengths.sum()) - (n_segs - 1)
        if slack < 0:
            n_segs -= 1
            continue
        # distribute the slack into n_segs + 1 gaps
        cuts = np.sort(rng.integers(0, slack + 1, size=n_segs))
        gaps = np.diff(np.concatenate([[0], cuts]))
        out, pos = [], 0
        for g, n in zip(gaps, lengths):
            start = pos + int(g)
            out.append((start, start + int(n)))
            pos = start + int(n) + 1
        return out
    return []


def generate_synthetic(config: SynthConfig, rng_seed: int, id_prefix: str = "s") -> Dataset:
    """Sinusoids plus Gaussian noise, with 1-3 injected anomalous segments per anomalous instance."""
    config.validate()
    rng = np.random.default_rng(rng_seed)
    N, D, T = config.n_instances, config.d_vars, config.length
    anomalous = np.zeros(N, dtype=bool)
    anomalous[rng.choice(N, size=config.anomalous_count(), replace=False)] = True
    width = len(str(max(N - 1, 0)))
    t = np.arange(T, dtype=np.float64)
    instances, labels, point_labels = [], [], []
    for i in range(N):
        periods = rng.uniform(*config.period_range, size=D)
        phases = rng.uniform(0, 2 * np.pi, size=D)
        amps = rng.uniform(*config.amplitude_range, size=D)
        offsets = rng.normal(0.0, config.offset_std, size=D)
        freqs = 2 * np.pi / periods
        X = offsets[:, None] + amps[:, None] * np.sin(freqs[:, None] * t[None, :] + phases[:, None])
        X = X + rng.normal(0.0, config.noise_std, size=(D, T))
        pl = np.zeros(T, dtype=np.int64)
        if anomalous[i]:
            n_segs = int(rng.integers(1, min(config.max_segments, 3) + 1))
            for start, end in _place_segments(rng, T, n_segs, config.min_segment_length, config.max_segment_length):
                kind = ANOMALY_KINDS[rng.integers(len(ANOMALY_KINDS))]
                vars_ = rng.choice(D, size=int(rng.integers(1, D + 1)), replace=False)
                seg = slice(start, end)
                for v in vars_:
                    base = amps[v] * np.sin(freqs[v] * t[seg] + phases[v])
                    if kind == "mean_shift":
                        X[v, seg] += rng.choice([-1.0, 1.0]) * rng.uniform(*config.shift_range)
                    elif kind == "amplitude":
                        X[v, seg] += (rng.uniform(*config.scale_range) - 1.0) * base
                    else:
                        f2 = freqs[v] * rng.uniform(*config.freq_factor_range)
                        X[v, seg] += amps[v] * np.sin(f2 * t[seg] + phases[v]) - base
                pl[seg] = 1
        instances.append(TemporalInstance(f"{id_prefix}{i:0{width}d}", X))
        labels.append(int(pl.max()))
        point_labels.append(pl)
    return Dataset(instances, labels, point_labels, "train")


def split_dataset(dataset: Dataset, ratios=(5, 2, 3), rng_seed: int = 0) -> dict:
    """Shuffle and split into train/valid/test with the given integer ratios."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) == 0:
        raise ValueError(f"split ratios must be three nonnegative numbers, got {ratios}")
    n = len(dataset)
    total = float(sum(ratios))
    n_train = int(math.floor(n * ratios[0] / total + 0.5))
    n_valid = int(math.floor(n * ratios[1] / total + 0.5))
    n_train = min(n_train, n)
    n_valid = min(n_valid, n - n_train)
    order = np.random.default_rng(rng_seed).permutation(n)
    parts = {"train": order[:n_train], "valid": order[n_train : n_train + n_valid], "test": order[n_train + n_valid :]}
    out = {}
    for tag, idx in parts.items():
        idx = sorted(idx, key=lambda k: dataset.instances[k].id)
        out[tag] = Dataset(
            [dataset.instances[k] for k in idx],
            [dataset.labels[k] for k in idx],
            None if dataset.point_labels is None else [dataset.point_labels[k] for k in idx],
            tag,
        )
    return out
