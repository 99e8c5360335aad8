"""Deterministic linear-model algebra on submodels.

Least squares restricted to a column subset, projection-defined targets,
residual projectors, and the standard errors that interval construction
multiplies by. Everything here is a pure function of its inputs; nothing
draws randomness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientSamples, RankDeficient

# Relative singular-value cutoff below which a submatrix counts as
# rank-deficient.
RANK_TOL = 1e-10


class DesignMatrix:
    """Fixed n x d design with cached column norms.

    Parameters
    ----------
    entries : array_like, shape (n, d)
        Feature matrix. Copied, cast to float64, and frozen.
    """

    def __init__(self, entries):
        a = np.array(entries, dtype=np.float64, order="C")
        if a.ndim != 2:
            raise DimensionMismatch(f"design must be 2-D, got ndim={a.ndim}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionMismatch(f"design must be at least 1x1, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("design entries must be finite")
        a.setflags(write=False)
        self.entries = a
        self.n, self.d = a.shape
        self.col_norms = np.linalg.norm(a, axis=0)
        self.col_norms.setflags(write=False)
        # max_i ||X_i||_2 and max |X_ij|, the two norms noise scales use
        self.l2inf_norm = float(self.col_norms.max())
        self.linf_norm = float(np.abs(a).max())

    def column(self, j: int) -> np.ndarray:
        return self.entries[:, j]

    def submatrix(self, model: "ModelSet") -> np.ndarray:
        return self.entries[:, list(model.indices)]

    def __repr__(self):
        return f"DesignMatrix(n={self.n}, d={self.d})"


@dataclass(frozen=True)
class ModelSet:
    """Strictly increasing tuple of selected feature indices; may be empty."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 0 for i in idx):
            raise ValueError(f"negative feature index in {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"indices must be strictly increasing, got {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_unordered(cls, indices) -> "ModelSet":
        return cls(tuple(sorted(set(int(i) for i in indices))))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, j):
        return j in self.indices


@dataclass(frozen=True)
class FitResult:
    """Per-selected-coefficient estimates and standard errors."""

    model: ModelSet
    coefficients: np.ndarray
    stderrs: np.ndarray

    def __post_init__(self):
        if len(self.coefficients) != len(self.model) or len(self.stderrs) != len(self.model):
            raise DimensionMismatch("fit vectors must match the model size")


def _check_model(X: DesignMatrix, M: ModelSet):
    if len(M) and max(M.indices) >= X.d:
        raise DimensionMismatch(
            f"model index {max(M.indices)} out of range for d={X.d}"
        )


def _svd_submodel(X: DesignMatrix, M: ModelSet):
    """Thin SVD of X_M with the rank check applied.

    Returns (U, s, Vt). Raises RankDeficient when the smallest singular
    value falls below RANK_TOL relative to the largest.
    """
    _check_model(X, M)
    Xm = X.submatrix(M)
    U, s, Vt = np.linalg.svd(Xm, full_matrices=False)
    if len(M) and (s[0] == 0.0 or s[-1] <= RANK_TOL * s[0]):
        raise RankDeficient(
            f"columns {M.indices}: singular value ratio "
            f"{0.0 if s[0] == 0 else s[-1] / s[0]:.3e} below {RANK_TOL:.1e}"
        )
    return U, s, Vt


def ols_fit(X: DesignMatrix, M: ModelSet, y) -> np.ndarray:
    """Least-squares coefficients of y on the columns of X indexed by M.

    Returns the |M|-vector (X_M^T X_M)^{-1} X_M^T y; empty M gives an
    empty vector. Raises RankDeficient / DimensionMismatch.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.n:
        raise DimensionMismatch(f"|y|={y.shape[0]} but n={X.n}")
    if len(M) == 0:
        return np.zeros(0)
    U, s, Vt = _svd_submodel(X, M)
    return Vt.T @ ((U.T @ y) / s)


def target_coefficients(X: DesignMatrix, M: ModelSet, mu) -> np.ndarray:
    """Projection-defined targets X_M^+ mu for the submodel M.

    Same code path as ols_fit applied to the mean vector, so the two agree
    exactly when mu = y.
    """
    return ols_fit(X, M, mu)


def residual_projector(X: DesignMatrix, M: ModelSet) -> np.ndarray:
    """The n x n orthogonal projector onto the complement of span(X_M)."""
    if len(M) == 0:
        return np.eye(X.n)
    U, _, _ = _svd_submodel(X, M)
    return np.eye(X.n) - U @ U.T


def stderr_known_sigma(X: DesignMatrix, M: ModelSet, sigma: float) -> np.ndarray:
    """Per-coefficient standard errors sigma * sqrt(diag((X_M^T X_M)^{-1}))."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if len(M) == 0:
        return np.zeros(0)
    _, s, Vt = _svd_submodel(X, M)
    # diag of (X^T X)^{-1} = rowwise sum of (V / s)^2
    inv_diag = ((Vt.T / s) ** 2).sum(axis=1)
    return sigma * np.sqrt(inv_diag)


def sigma_hat_full_model(X: DesignMatrix, y) -> tuple[float, int]:
    """Full-model residual noise estimate (sigma_hat, dof = n - d).

    Requires n > d and a full-rank design; raises InsufficientSamples
    otherwise.
    """
    if X.n <= X.d:
        raise InsufficientSamples(f"need n > d for the full-model estimate, got n={X.n}, d={X.d}")
    y = np.asarray(y, dtype=np.float64).ravel()
    full = ModelSet(tuple(range(X.d)))
    beta = ols_fit(X, full, y)
    rss = float(np.sum((y - X.entries @ beta) ** 2))
    dof = X.n - X.d
    return float(np.sqrt(rss / dof)), dof


class OrthonormalBasis:
    """Incrementally grown orthonormal basis of selected design columns.

    Supports forward stepwise: adding a column Gram-Schmidt-residualizes it
    against the current basis; residualize() applies the complement
    projector without forming an n x n matrix.
    """

    def __init__(self, n: int):
        self.n = n
        self._q: list[np.ndarray] = []

    def __len__(self):
        return len(self._q)

    def residualize(self, v: np.ndarray) -> np.ndarray:
        r = v.astype(np.float64, copy=True)
        for q in self._q:
            r -= q * (q @ r)
        return r

    def add_column(self, v: np.ndarray, rel_tol: float = RANK_TOL) -> bool:
        """Add v's residual direction; returns False if v is numerically in
        the current span."""
        r = self.residualize(v)
        # second pass stabilizes classical Gram-Schmidt
        r = self.residualize(r)
        nrm = np.linalg.norm(r)
        if nrm <= rel_tol * max(np.linalg.norm(v), 1e-300):
            return False
        self._q.append(r / nrm)
        return True
