"""Kernel functions and Gram matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .domain import Dataset

LINEAR = "linear"
POLYNOMIAL = "polynomial"
RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel description.

    Polynomial kernels are inhomogeneous, ``(1 + <x, x'>)**degree``; RBF uses the
    inverse width ``g`` in ``exp(-g * |x - x'|**2)``.
    """

    kind: str
    degree: int | None = None
    inv_width: float | None = None

    def __post_init__(self):
        if self.kind == POLYNOMIAL:
            if self.degree is None or int(self.degree) != self.degree or self.degree < 1:
                raise ValueError(f"polynomial degree must be an integer >= 1, got {self.degree}")
        elif self.kind == RBF:
            if self.inv_width is None or not self.inv_width > 0:
                raise ValueError(f"rbf inv_width must be positive, got {self.inv_width}")
        elif self.kind != LINEAR:
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(LINEAR)

    @classmethod
    def polynomial(cls, degree: int) -> "KernelSpec":
        return cls(POLYNOMIAL, degree=int(degree))

    @classmethod
    def rbf(cls, inv_width: float) -> "KernelSpec":
        return cls(RBF, inv_width=float(inv_width))

    @property
    def label(self) -> str:
        if self.kind == POLYNOMIAL:
            return f"poly{self.degree}"
        if self.kind == RBF:
            return f"rbf{self.inv_width:g}"
        return "linear"

    def to_dict(self) -> dict:
        d: dict = {"type": self.kind}
        if self.kind == POLYNOMIAL:
            d["degree"] = self.degree
            d["homogeneous"] = False
        elif self.kind == RBF:
            d["inv_width"] = self.inv_width
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["type"], degree=d.get("degree"), inv_width=d.get("inv_width"))

    @classmethod
    def parse(cls, name: str, inv_width: float | None = None) -> "KernelSpec":
        """Parse CLI-style names: ``linear``, ``poly2``, ``poly3``, ``rbf``."""
        if name == "linear":
            return cls.linear()
        if name.startswith("poly"):
            return cls.polynomial(int(name[4:] or 2))
        if name == "rbf":
            return cls.rbf(0.1 if inv_width is None else inv_width)
        raise ValueError(f"unknown kernel {name!r}")

    @property
    def complexity(self) -> tuple:
        """Sort key: linear < polynomial (by degree) < rbf (wider first)."""
        if self.kind == LINEAR:
            return (0, 0.0)
        if self.kind == POLYNOMIAL:
            return (1, float(self.degree))
        return (2, float(self.inv_width))


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    return float(kernel_matrix(spec, x[None, :], x2[None, :])[0, 0])


def kernel_matrix(spec: KernelSpec, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Matrix of kernel values ``K[i, j] = K(X1[i], X2[j])``."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != X2.shape[1]:
        raise ValueError(f"dimension mismatch: {X1.shape[1]} vs {X2.shape[1]}")
    if spec.kind == LINEAR:
        return X1 @ X2.T
    if spec.kind == POLYNOMIAL:
        return (1.0 + X1 @ X2.T) ** spec.degree
    # cdist is exact for identical rows, so the diagonal of a Gram matrix is 1
    return np.exp(-spec.inv_width * cdist(X1, X2, "sqeuclidean"))


def gram_matrix(spec: KernelSpec, dataset: Dataset) -> np.ndarray:
    if not dataset.is_canonical:
        raise ValueError("gram_matrix expects a canonical (treatment-first) dataset")
    K = kernel_matrix(spec, dataset.X, dataset.X)
    # symmetrize away round-off from the matrix product
    return 0.5 * (K + K.T)


def sign_vector(dataset: Dataset) -> np.ndarray:
    """``y_i`` for treatment units and ``-y_j`` for control units."""
    return np.where(dataset.treated, dataset.y_obs, -dataset.y_obs)


def signed_gram(K: np.ndarray, dataset: Dataset) -> np.ndarray:
    """``D K D`` with ``D = diag(y^T, -y^C)`` in canonical order."""
    K = np.asarray(K, dtype=float)
    n = len(dataset)
    if K.shape != (n, n):
        raise ValueError(f"Gram matrix shape {K.shape} does not match {n} units")
    s = sign_vector(dataset)
    return K * np.outer(s, s)
