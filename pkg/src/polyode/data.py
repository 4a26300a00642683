"""Datasets: synthetic surrogate tasks, CSV ingestion, standardization and splits.

Internal layout is features x samples and targets x samples.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .integrators import StepControl, dopri5_solve


class DataParseError(ValueError):
    pass


class DataShapeError(ValueError):
    pass


class SynthKind(str, enum.Enum):
    SMOOTH_MAP = "smooth"
    PARAMETRIC_ODE = "ode"


class Orientation(str, enum.Enum):
    SAMPLES_AS_ROWS = "rows"
    SAMPLES_AS_COLS = "cols"


@dataclass(frozen=True)
class Stats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (x - self.mean[:, None]) / self.std[:, None]

    def invert(self, x):
        return x * self.std[:, None] + self.mean[:, None]

    @classmethod
    def of(cls, x) -> "Stats":
        mean = x.mean(axis=1)
        std = x.std(axis=1)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    feature_stats: Optional[Stats] = None
    target_stats: Optional[Stats] = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.targets.ndim != 2:
            raise DataShapeError("features and targets must be 2-D")
        if self.features.shape[1] != self.targets.shape[1]:
            raise DataShapeError(
                f"sample counts differ: {self.features.shape[1]} features vs "
                f"{self.targets.shape[1]} targets"
            )

    @property
    def n_samples(self) -> int:
        return self.features.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[0]

    @property
    def m_targets(self) -> int:
        return self.targets.shape[0]

    def subset(self, idx) -> "Dataset":
        return replace(self, features=self.features[:, idx], targets=self.targets[:, idx])

    def destandardize_targets(self, pred):
        return self.target_stats.invert(pred) if self.target_stats else pred


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (1740 / 2486, 497 / 2486, 249 / 2486)  # train, val, test
    seed: int = 0

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        object.__setattr__(self, "fractions", f)
        if len(f) != 3 or any(x < 0 for x in f):
            raise ValueError("need three non-negative fractions")
        if not math.isclose(sum(f), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("split fractions must sum to 1")
        if f[0] == 0:
            raise ValueError("train fraction must be positive")


ELM_SPLIT = SplitSpec()


def _smooth_map_matrices(n, m, seed, hidden=32):
    rng = np.random.default_rng([seed, 1])
    B1 = rng.normal(size=(hidden, n)) * (2.0 / np.sqrt(n))
    B2 = rng.normal(size=(m, hidden)) * (2.0 / np.sqrt(hidden))
    return B1, B2


def synth_surrogate(kind, n_features: int, m_targets: int, n_samples: int, seed: int = 0,
                    overrides: Optional[dict] = None, y: Optional[np.ndarray] = None) -> Dataset:
    """Deterministic synthetic surrogate task.

    ``smooth``: ``c = tanh(B2 tanh(B1 y))`` with ``y ~ U[-1, 1]^n``.
    ``ode``: ``c = x(1)`` for ``dx/dt = M(y) x``, ``M(y) = sum_k y_k M_k``, from a
    fixed ``x(0)``.

    ``overrides`` replaces generator matrices by name (``B1``, ``B2``, ``M``,
    ``x0``); ``y`` replaces the sampled inputs. Both exist for testing.
    """
    kind = SynthKind(kind)
    if min(n_features, m_targets, n_samples) < 1:
        raise ValueError("dimensions must be positive")
    overrides = overrides or {}
    rng = np.random.default_rng([seed, 0])
    if y is None:
        y = rng.uniform(-1.0, 1.0, size=(n_features, n_samples))
    y = np.asarray(y, dtype=float)

    if kind is SynthKind.SMOOTH_MAP:
        B1, B2 = _smooth_map_matrices(n_features, m_targets, seed)
        B1 = overrides.get("B1", B1)
        B2 = overrides.get("B2", B2)
        c = np.tanh(B2 @ np.tanh(B1 @ y))
        return Dataset(y, c)

    grng = np.random.default_rng([seed, 2])
    M = grng.normal(size=(n_features, m_targets, m_targets)) / np.sqrt(m_targets * n_features)
    M = overrides.get("M", M)
    x0 = overrides.get("x0", np.ones(m_targets) / np.sqrt(m_targets))
    # one system matrix per sample: S[i] = sum_k y[k, i] M[k]
    S = np.einsum("ki,kab->iab", y, M)
    X0 = np.repeat(x0[:, None], y.shape[1], axis=1)

    def rhs(t, X):
        return np.einsum("iab,bi->ai", S, X)

    rec = dopri5_solve(rhs, X0, (0.0, 1.0), StepControl(rtol=1e-10, atol=1e-12), keep_dense=False)
    return Dataset(y, rec.y_final)


def _read_matrix(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataParseError(f"{path}: line {lineno} has {len(row)} cells, expected {width}")
            vals = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataParseError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col}"
                    ) from None
                if not math.isfinite(v):
                    raise DataParseError(f"{path}: non-finite value {cell!r} at row {lineno}, column {col}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataParseError(f"{path}: no data")
    return np.array(rows)


def load_csv(features_path, targets_path, orientation=Orientation.SAMPLES_AS_COLS) -> Dataset:
    orientation = Orientation(orientation)
    F = _read_matrix(features_path)
    C = _read_matrix(targets_path)
    if orientation is Orientation.SAMPLES_AS_ROWS:
        F, C = F.T, C.T
    if F.shape[1] != C.shape[1]:
        raise DataShapeError(f"features have {F.shape[1]} samples, targets have {C.shape[1]}")
    return Dataset(F, C)


def write_sidecar(path, ds: Dataset, orientation, split: SplitSpec, source: str = ""):
    meta = {
        "source": source,
        "orientation": Orientation(orientation).value,
        "n_features": ds.n_features,
        "m_targets": ds.m_targets,
        "n_samples": ds.n_samples,
        "split_fractions": list(split.fractions),
        "split_seed": split.seed,
    }
    Path(path).write_text(json.dumps(meta, indent=2) + "\n")
    return meta


def standardize(ds: Dataset, feature_stats: Stats | None = None, target_stats: Stats | None = None) -> Dataset:
    """Per-row zero mean / unit std; stats default to those of ``ds`` itself.

    Constant rows get std 1. The returned dataset keeps the stats needed to
    map predictions back.
    """
    fs = feature_stats or Stats.of(ds.features)
    ts = target_stats or Stats.of(ds.targets)
    return Dataset(fs.apply(ds.features), ts.apply(ds.targets), fs, ts)


def destandardize(ds: Dataset) -> Dataset:
    f = ds.feature_stats.invert(ds.features) if ds.feature_stats else ds.features
    c = ds.target_stats.invert(ds.targets) if ds.target_stats else ds.targets
    return Dataset(f, c)


def split_sizes(n: int, spec: SplitSpec) -> tuple:
    n_train = int(round(spec.fractions[0] * n))
    n_val = int(round(spec.fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split(ds: Dataset, spec: SplitSpec = ELM_SPLIT, normalize: bool = True):
    """Seeded permutation then contiguous cuts into (train, val, test).

    With ``normalize`` all three parts are standardized using train statistics only.
    """
    n_train, n_val, n_test = split_sizes(ds.n_samples, spec)
    if n_train == 0:
        raise ValueError("empty training split")
    perm = np.random.default_rng(spec.seed).permutation(ds.n_samples)
    parts = [
        ds.subset(perm[:n_train]),
        ds.subset(perm[n_train:n_train + n_val]),
        ds.subset(perm[n_train + n_val:]),
    ]
    if normalize:
        fs, ts = Stats.of(parts[0].features), Stats.of(parts[0].targets)
        parts = [standardize(p, fs, ts) for p in parts]
    return tuple(parts)


def parse_source(desc: str) -> tuple:
    """Parse ``synth:<kind>:<n>:<m>:<samples>`` or ``csv:<features>:<targets>[:rows|cols]``."""
    parts = desc.split(":")
    if parts[0] == "synth" and len(parts) == 5:
        return ("synth", SynthKind(parts[1]), int(parts[2]), int(parts[3]), int(parts[4]))
    if parts[0] == "csv" and len(parts) in (3, 4):
        orient = Orientation(parts[3]) if len(parts) == 4 else Orientation.SAMPLES_AS_COLS
        return ("csv", parts[1], parts[2], orient)
    raise ValueError(f"unrecognized data source {desc!r}")


def load_source(desc: str, seed: int = 0) -> Dataset:
    spec = parse_source(desc)
    if spec[0] == "synth":
        _, kind, n, m, ns = spec
        return synth_surrogate(kind, n, m, ns, seed)
    return load_csv(spec[1], spec[2], spec[3])
