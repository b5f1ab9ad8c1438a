"""Benchmark populations with full potential-outcome ground truth.

All generators draw from numpy's counter-based Philox bit generator. A seed is
expanded with :class:`numpy.random.SeedSequence` into two independent streams:
stream 0 produces covariates and potential outcomes, stream 1 the group
assignment. The algorithm identifier is stored in ``dataset.meta["rng"]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .domain import Dataset, Group, Unit

RNG_ID = "numpy.random.Philox(SeedSequence(seed).spawn(2))"
SPIRAL_RADIUS = 6.5

BALANCED = "balanced"
BERNOULLI = "bernoulli"
COVARIATE_SIGMOID = "covariate_sigmoid"


@dataclass(frozen=True)
class Assignment:
    """Treatment assignment mechanism.

    ``balanced``: P(T) = 0.5. ``bernoulli``: P(T) = p.
    ``covariate_sigmoid``: P(T) = scale * (1 - exp(-x_k^2)) / (1 + exp(-x_k^2)).
    """

    kind: str = BALANCED
    p: float = 0.5
    scale: float = 0.75
    feature_index: int = 0

    def __post_init__(self):
        if self.kind == BERNOULLI and not 0.0 < self.p < 1.0:
            raise ValueError("bernoulli p must lie in (0, 1)")
        if self.kind == COVARIATE_SIGMOID and not 0.0 < self.scale <= 1.0:
            raise ValueError("covariate_sigmoid scale must lie in (0, 1]")
        if self.kind not in (BALANCED, BERNOULLI, COVARIATE_SIGMOID):
            raise ValueError(f"unknown assignment {self.kind!r}")

    @classmethod
    def balanced(cls) -> "Assignment":
        return cls(BALANCED)

    @classmethod
    def bernoulli(cls, p: float) -> "Assignment":
        return cls(BERNOULLI, p=p)

    @classmethod
    def covariate_sigmoid(cls, scale: float, feature_index: int) -> "Assignment":
        return cls(COVARIATE_SIGMOID, scale=scale, feature_index=feature_index)

    def probabilities(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        if self.kind == BALANCED:
            return np.full(n, 0.5)
        if self.kind == BERNOULLI:
            return np.full(n, self.p)
        e = np.exp(-X[:, self.feature_index] ** 2)
        return self.scale * (1.0 - e) / (1.0 + e)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.Philox(a)), np.random.Generator(np.random.Philox(b))


def _draw_pm1(rng: np.random.Generator, p_one: np.ndarray) -> np.ndarray:
    return np.where(rng.random(len(p_one)) < p_one, 1, -1)


def _build(X, y_t, y_c, treated, meta) -> Dataset:
    units = []
    for x, yt, yc, w in zip(X, y_t, y_c, treated):
        units.append(
            Unit(
                features=tuple(float(v) for v in x),
                group=Group.TREATMENT if w else Group.CONTROL,
                y_obs=int(yt if w else yc),
                y_t=int(yt),
                y_c=int(yc),
            )
        )
    return Dataset(tuple(units), meta)


def _finish(X, y_t, y_c, assignment: Assignment, rng_assign, meta) -> Dataset:
    treated = rng_assign.random(X.shape[0]) < assignment.probabilities(X)
    meta = dict(meta, rng=RNG_ID, assignment=asdict(assignment))
    return _build(X, y_t, y_c, treated, meta)


def generate_spirals(
    n: int,
    noise_prob: float = 0.0,
    seed: int = 0,
    assignment: Assignment = Assignment(),
    radius: float = SPIRAL_RADIUS,
) -> Dataset:
    """Two interleaved spirals with opposite treatment effects.

    Arm ``a`` (first half 0, second half 1) has angle ``t ~ U[pi/4, 4 pi]`` and
    points ``t * (cos(t + a pi), sin(t + a pi))`` scaled so the outermost radius
    is ``radius``. Arm 0 has ``(y_t, y_c) = (1, -1)``, arm 1 the reverse; with
    probability ``noise_prob`` a unit's potential outcomes are swapped.
    """
    if n % 2:
        raise ValueError("n must be even")
    if not 0.0 <= noise_prob < 1.0:
        raise ValueError("noise_prob must lie in [0, 1)")
    rng, rng_assign = _streams(seed)
    arm = np.repeat([0, 1], n // 2)
    t = rng.uniform(np.pi / 4, 4 * np.pi, n)
    ang = t + arm * np.pi
    X = np.column_stack([t * np.cos(ang), t * np.sin(ang)]) * (radius / (4 * np.pi))
    y_t = np.where(arm == 0, 1, -1)
    flip = rng.random(n) < noise_prob
    y_t = np.where(flip, -y_t, y_t)
    y_c = -y_t
    meta = {"generator": "spirals", "n": n, "noise_prob": noise_prob, "seed": seed, "radius": radius}
    return _finish(X, y_t, y_c, assignment, rng_assign, meta)


def generate_threshold_2d(n: int, seed: int = 0, assignment: Assignment = Assignment()) -> Dataset:
    """Uniform square; the effect flips sign twice along the first feature."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng, rng_assign = _streams(seed)
    X = rng.uniform(0.0, 1.0, (n, 2))
    x1 = X[:, 0]
    p_t = np.select([x1 < 0.6, x1 < 0.8], [0.4, 0.3], 0.8)
    p_c = np.select([x1 < 0.6, x1 < 0.8], [0.6, 0.7], 0.2)
    y_t = _draw_pm1(rng, p_t)
    y_c = _draw_pm1(rng, p_c)
    meta = {"generator": "threshold_2d", "n": n, "seed": seed}
    return _finish(X, y_t, y_c, assignment, rng_assign, meta)


def _mixed_features(rng, n, n_normal, n_uniform):
    return np.hstack([rng.standard_normal((n, n_normal)), rng.uniform(-1.0, 1.0, (n, n_uniform))])


def generate_imbalanced_30(
    n: int = 1000, seed: int = 0, assignment: Assignment = Assignment.bernoulli(0.7)
) -> Dataset:
    """20 normal + 10 uniform features; control with probability 0.3.

    P(y_t = 1) is 0.8 when ``|x| > 3`` and 0.2 otherwise; P(y_c = 1) = 0.2.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng, rng_assign = _streams(seed)
    X = _mixed_features(rng, n, 20, 10)
    norm = np.linalg.norm(X, axis=1)
    y_t = _draw_pm1(rng, np.where(norm > 3.0, 0.8, 0.2))
    y_c = _draw_pm1(rng, np.full(n, 0.2))
    meta = {
        "generator": "imbalanced_30",
        "n": n,
        "seed": seed,
        "outcome_reading": "P(y_t=1)=0.8 if |x|>3 else 0.2",
    }
    return _finish(X, y_t, y_c, assignment, rng_assign, meta)


def generate_highdim_120(n: int = 1000, seed: int = 0, assignment: Assignment = Assignment()) -> Dataset:
    """60 normal + 60 uniform features; effect depends on the norm band."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng, rng_assign = _streams(seed)
    X = _mixed_features(rng, n, 60, 60)
    norm = np.linalg.norm(X, axis=1)
    p_t = np.select([norm < 3.0, norm < 4.0], [0.4, 0.3], 0.2)
    p_c = np.select([norm < 3.0, norm < 4.0], [0.6, 0.7], 0.2)
    y_t = _draw_pm1(rng, p_t)
    y_c = _draw_pm1(rng, p_c)
    meta = {"generator": "highdim_120", "n": n, "seed": seed}
    return _finish(X, y_t, y_c, assignment, rng_assign, meta)


def apply_assignment(dataset: Dataset, mechanism: Assignment, seed: int) -> Dataset:
    """Redraw groups with ``mechanism`` and set ``y_obs`` from the potential outcomes."""
    if not dataset.has_truth:
        raise ValueError("apply_assignment needs both potential outcomes on every unit")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    treated = rng.random(len(dataset)) < mechanism.probabilities(dataset.X)
    units = [
        replace(
            u,
            group=Group.TREATMENT if w else Group.CONTROL,
            y_obs=u.y_t if w else u.y_c,
        )
        for u, w in zip(dataset.units, treated)
    ]
    meta = dict(dataset.meta, assignment=asdict(mechanism), assignment_seed=seed)
    return Dataset(tuple(units), meta)


GENERATORS = {
    "spirals": generate_spirals,
    "threshold_2d": generate_threshold_2d,
    "imbalanced_30": generate_imbalanced_30,
    "highdim_120": generate_highdim_120,
}


@dataclass(frozen=True)
class GeneratorSpec:
    name: str
    n: int
    seed: int = 0
    noise_prob: float = 0.0
    assignment: Assignment | None = None

    def __post_init__(self):
        if self.name not in GENERATORS:
            raise ValueError(f"unknown generator {self.name!r}")
        if self.n < 4:
            raise ValueError("n must be >= 4")

    def generate(self, seed: int | None = None) -> Dataset:
        seed = self.seed if seed is None else seed
        kw = {} if self.assignment is None else {"assignment": self.assignment}
        if self.name == "spirals":
            return generate_spirals(self.n, self.noise_prob, seed, **kw)
        return GENERATORS[self.name](self.n, seed=seed, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        d = dict(d)
        if d.get("assignment") is not None:
            d["assignment"] = Assignment(**d["assignment"])
        return cls(**d)
