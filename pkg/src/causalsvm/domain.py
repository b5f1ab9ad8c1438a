"""Units, datasets, validation, splitting and CSV I/O."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class Group(enum.Enum):
    TREATMENT = "T"
    CONTROL = "C"


class EffectLabel(enum.Enum):
    POSITIVE = 1
    NEUTRAL = 0
    NEGATIVE = -1


class DatasetError(ValueError):
    """Raised for malformed datasets or dataset files."""


@dataclass(frozen=True)
class Unit:
    """One observation.

    ``y_t``/``y_c`` are the potential outcomes and are only known for
    synthetic data. ``ratio`` is the density ratio mu_{X|C}(x) / mu_{X|T}(x)
    used to reweight control units.
    """

    features: tuple[float, ...]
    group: Group
    y_obs: int
    y_t: int | None = None
    y_c: int | None = None
    ratio: float | None = None

    @property
    def is_treated(self) -> bool:
        return self.group is Group.TREATMENT

    @property
    def has_truth(self) -> bool:
        return self.y_t is not None and self.y_c is not None


def make_unit(features, group, y_obs, y_t=None, y_c=None, ratio=None) -> Unit:
    if isinstance(group, str):
        group = Group(group)
    return Unit(
        features=tuple(float(v) for v in np.ravel(features)),
        group=group,
        y_obs=int(y_obs),
        y_t=None if y_t is None else int(y_t),
        y_c=None if y_c is None else int(y_c),
        ratio=None if ratio is None else float(ratio),
    )


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of units.

    Array views (``X``, ``y_obs``, ...) are computed once and cached; treat
    them as read-only.
    """

    units: tuple[Unit, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not isinstance(self.units, tuple):
            object.__setattr__(self, "units", tuple(self.units))

    def __len__(self) -> int:
        return len(self.units)

    @property
    def n_t(self) -> int:
        return int(self.treated.sum())

    @property
    def n_c(self) -> int:
        return len(self.units) - self.n_t

    @property
    def dim(self) -> int:
        return len(self.units[0].features) if self.units else 0

    @cached_property
    def X(self) -> np.ndarray:
        if not self.units:
            return np.zeros((0, 0))
        X = np.array([u.features for u in self.units], dtype=float)
        X.setflags(write=False)
        return X

    @cached_property
    def treated(self) -> np.ndarray:
        t = np.array([u.is_treated for u in self.units], dtype=bool)
        t.setflags(write=False)
        return t

    @cached_property
    def y_obs(self) -> np.ndarray:
        return np.array([u.y_obs for u in self.units], dtype=float)

    @cached_property
    def ratios(self) -> np.ndarray:
        """Density ratios, NaN where absent."""
        return np.array(
            [np.nan if u.ratio is None else u.ratio for u in self.units], dtype=float
        )

    @property
    def has_truth(self) -> bool:
        return all(u.has_truth for u in self.units)

    def truths(self) -> tuple[np.ndarray, np.ndarray]:
        """Potential outcomes ``(y_t, y_c)``; raises if any are missing."""
        if not self.has_truth:
            raise DatasetError("dataset lacks ground-truth potential outcomes")
        y_t = np.array([u.y_t for u in self.units], dtype=float)
        y_c = np.array([u.y_c for u in self.units], dtype=float)
        return y_t, y_c

    @property
    def is_canonical(self) -> bool:
        t = self.treated
        return bool(np.all(t[:-1] >= t[1:])) if len(t) > 1 else True

    def canonical(self) -> "Dataset":
        """Treatment units first, then control units; order within a group kept."""
        if self.is_canonical:
            return self
        units = [u for u in self.units if u.is_treated] + [
            u for u in self.units if not u.is_treated
        ]
        return Dataset(tuple(units), dict(self.meta))

    def with_units(self, units: Iterable[Unit]) -> "Dataset":
        return Dataset(tuple(units), dict(self.meta))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.units[i] for i in indices), dict(self.meta))


@dataclass(frozen=True)
class Violation:
    index: int | None
    reason: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_dataset(dataset: Dataset) -> ValidationResult:
    """Check unit and dataset invariants; violations are collected, never raised."""
    out: list[Violation] = []
    if dataset.n_t < 1:
        out.append(Violation(None, "n_t >= 1 fails"))
    if dataset.n_c < 1:
        out.append(Violation(None, "n_c >= 1 fails"))
    dim = dataset.dim
    for i, u in enumerate(dataset.units):
        if len(u.features) != dim:
            out.append(Violation(i, f"feature dimension {len(u.features)} != {dim}"))
        if not all(math.isfinite(v) for v in u.features):
            out.append(Violation(i, "non-finite feature"))
        for name in ("y_obs", "y_t", "y_c"):
            v = getattr(u, name)
            if v is not None and v not in (-1, 1):
                out.append(Violation(i, f"{name} must be -1 or 1"))
        if u.group is Group.TREATMENT and u.y_t is not None and u.y_obs != u.y_t:
            out.append(Violation(i, "y_obs must equal y_t for a treatment unit"))
        if u.group is Group.CONTROL and u.y_c is not None and u.y_obs != u.y_c:
            out.append(Violation(i, "y_obs must equal y_c for a control unit"))
        if u.ratio is not None and not (math.isfinite(u.ratio) and u.ratio > 0):
            out.append(Violation(i, "ratio must be positive and finite"))
    return ValidationResult(tuple(out))


def split_train_test(
    dataset: Dataset, test_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Uniform random train/test partition, both halves canonicalized.

    The test side gets ``round(test_fraction * n)`` units, clamped so each side
    keeps at least one unit. No stratification by group.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 units to split")
    n_test = min(max(int(round(test_fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.subset(train_idx).canonical(), dataset.subset(test_idx).canonical()


# -- CSV ---------------------------------------------------------------------

_OPTIONAL = ("y_t", "y_c", "ratio")


def _feature_columns(header: Sequence[str]) -> list[str]:
    feats = [h for h in header if h.startswith("f") and h[1:].isdigit()]
    expected = [f"f{i}" for i in range(len(feats))]
    if sorted(feats, key=lambda s: int(s[1:])) != expected:
        raise DatasetError(f"feature columns must be f0..f{len(feats) - 1}")
    return expected


def read_csv(path: str | Path) -> Dataset:
    """Parse the strict dataset CSV format (see README)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise DatasetError(f"{path}: missing header")
        fcols = _feature_columns(header)
        known = set(fcols) | {"group", "y_obs", *_OPTIONAL}
        unknown = [h for h in header if h not in known and not h.startswith("meta_")]
        if unknown:
            raise DatasetError(f"{path}: unknown columns {unknown}")
        for req in ("group", "y_obs"):
            if req not in header:
                raise DatasetError(f"{path}: missing required column {req!r}")
        units = []
        for lineno, row in enumerate(reader, start=2):
            try:
                opt = {
                    k: (float(row[k]) if k == "ratio" else int(row[k]))
                    for k in _OPTIONAL
                    if k in row and row[k] not in ("", None)
                }
                if row["group"] not in ("T", "C"):
                    raise ValueError(f"group must be T or C, got {row['group']!r}")
                unit = make_unit(
                    [float(row[c]) for c in fcols], row["group"], int(row["y_obs"]), **opt
                )
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            for name in ("y_obs", "y_t", "y_c"):
                if getattr(unit, name) not in (None, -1, 1):
                    raise DatasetError(f"{path}:{lineno}: {name} must be -1 or 1")
            if unit.ratio is not None and not (math.isfinite(unit.ratio) and unit.ratio > 0):
                raise DatasetError(f"{path}:{lineno}: ratio must be positive")
            units.append(unit)
    return Dataset(tuple(units))


def write_csv(dataset: Dataset, path: str | Path) -> None:
    cols = [f"f{i}" for i in range(dataset.dim)] + ["group", "y_obs"]
    opt = [c for c in _OPTIONAL if any(getattr(u, c) is not None for u in dataset.units)]
    cols += opt
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for u in dataset.units:
            row = [repr(v) for v in u.features] + [u.group.value, u.y_obs]
            for c in opt:
                v = getattr(u, c)
                row.append("" if v is None else (repr(v) if c == "ratio" else v))
            w.writerow(row)


def with_ratios(dataset: Dataset, ratios: Sequence[float | None]) -> Dataset:
    """Copy of ``dataset`` with per-unit ratios replaced."""
    return dataset.with_units(
        replace(u, ratio=None if r is None else float(r))
        for u, r in zip(dataset.units, ratios)
    )
