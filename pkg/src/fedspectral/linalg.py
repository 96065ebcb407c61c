"""Dense numerical kernel: distances, robust scalar statistics, small-rank PCA.

All vectors are flat float64 arrays of a fixed dimension ``d`` (the model's
parameter count). Entries must be finite; boundary helpers enforce this so the
rest of the package can assume clean inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "InsufficientBufferError",
    "as_update_vector",
    "as_update_matrix",
    "pairwise_sq_distances",
    "coordinate_median",
    "nearest_rank_quantile",
    "pca_topk",
    "orthogonal_energy",
    "SubspaceModel",
    "BufferMatrix",
]


class DimensionMismatchError(ValueError):
    """Raised when vectors of unequal dimension meet; names the offenders."""

    def __init__(self, message: str, indices: tuple[int, ...] = ()):
        super().__init__(message)
        self.indices = indices


class InsufficientBufferError(ValueError):
    """Raised when a subspace is requested from fewer than two rows."""


def as_update_vector(v, name: str = "update") -> np.ndarray:
    """Coerce to a finite 1-D float64 vector; reject NaN/Inf and bad shapes."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_update_matrix(vectors, name: str = "updates") -> np.ndarray:
    """Stack equally-sized vectors into an (n, d) float64 matrix.

    Raises :class:`DimensionMismatchError` naming the first offending index
    when dimensions disagree.
    """
    if len(vectors) == 0:
        raise ValueError(f"{name} is empty")
    rows = [as_update_vector(v, f"{name}[{i}]") for i, v in enumerate(vectors)]
    d = rows[0].shape[0]
    for i, r in enumerate(rows):
        if r.shape[0] != d:
            raise DimensionMismatchError(
                f"{name}[{i}] has dimension {r.shape[0]}, expected {d} "
                f"(from {name}[0])",
                indices=(0, i),
            )
    return np.stack(rows, axis=0)


def pairwise_sq_distances(vectors) -> np.ndarray:
    """Symmetric n x n matrix of squared Euclidean distances.

    Computed from explicit differences (not the expanded dot-product form) so
    entries are exactly nonnegative and match a double-loop evaluation.
    """
    x = vectors if isinstance(vectors, np.ndarray) else as_update_matrix(vectors)
    if x.ndim != 2:
        raise ValueError(f"expected 2-D stack, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 vectors for pairwise distances")
    diff = x[:, None, :] - x[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    np.fill_diagonal(d2, 0.0)
    return d2


def coordinate_median(vectors) -> np.ndarray:
    """Per-coordinate median; even counts take the midpoint of the central pair."""
    x = vectors if isinstance(vectors, np.ndarray) else as_update_matrix(vectors)
    return np.median(x, axis=0)


def nearest_rank_quantile(values, q: float) -> float:
    """Nearest-rank quantile: the ceil(q*m)-th smallest of m values.

    q=0 returns the minimum, q=1 the maximum; the result is always an element
    of the input.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ValueError("quantile of empty value set")
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q must lie in [0, 1], got {q}")
    rank = max(1, math.ceil(q * vals.size))
    return float(np.sort(vals)[rank - 1])


def pca_topk(rows: np.ndarray, r: int) -> np.ndarray:
    """Top-r principal directions of a centered row stack, as d x r columns.

    Works on the m x m Gram matrix rather than the d x d covariance: buffers
    are short (m <= 50) while d may be ~1e4. Eigenvectors are mapped back
    through the data matrix and renormalized. The requested rank is clamped to
    min(m-1, d) and further to the numerical rank (eigenvalues below
    1e-12 * max eigenvalue are dropped), so fewer than r columns may return.

    Sign convention: each column's largest-magnitude entry is made positive,
    which keeps golden-file tests bit-stable.
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected 2-D row stack, got shape {x.shape}")
    m, d = x.shape
    if m < 2:
        raise InsufficientBufferError(f"need >= 2 rows for PCA, got {m}")
    if r < 1:
        raise ValueError(f"rank must be positive, got {r}")
    r_eff = min(r, m - 1, d)

    gram = x @ x.T
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1][:r_eff]
    lam = eigvals[order]
    keep = lam > max(lam[0] if lam.size else 0.0, 0.0) * 1e-10
    keep &= lam > 0.0
    lam = lam[keep]
    w = eigvecs[:, order[keep]]

    basis = (x.T @ w) / np.sqrt(lam)[None, :]
    if basis.shape[1]:
        # Mapping through x loses orthogonality for small eigenvalues; QR
        # restores it without changing the spanned subspace.
        basis, _ = np.linalg.qr(basis)
    for j in range(basis.shape[1]):
        col = basis[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            basis[:, j] = -col
    return basis


@dataclass
class SubspaceModel:
    """Learned benign geometry: orthonormal basis, centering vector, threshold.

    ``basis`` is d x r column-orthonormal (checked to 1e-8 per entry) and
    ``tau`` is the calibrated orthogonal-energy threshold.
    """

    basis: np.ndarray
    center: np.ndarray
    tau: float
    rank: int = field(default=0)

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.center = as_update_vector(self.center, "center")
        if self.basis.ndim != 2:
            raise ValueError(f"basis must be 2-D, got shape {self.basis.shape}")
        if self.basis.shape[0] != self.center.shape[0]:
            raise DimensionMismatchError(
                f"basis has {self.basis.shape[0]} rows, center has dimension "
                f"{self.center.shape[0]}"
            )
        if self.tau < 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")
        if self.rank == 0:
            self.rank = self.basis.shape[1]
        gram = self.basis.T @ self.basis
        if not np.allclose(gram, np.eye(self.basis.shape[1]), atol=1e-8):
            raise ValueError("basis columns are not orthonormal to 1e-8")

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def project_coords(self, v: np.ndarray) -> np.ndarray:
        """Spectral coordinates U^T v."""
        return self.basis.T @ v


def orthogonal_energy(v: np.ndarray, subspace: SubspaceModel) -> float:
    """Norm of the component of ``v`` outside the subspace: ||v - U(U^T v)||.

    Applied to the raw vector; callers that want centering subtract the
    model's center first.
    """
    vec = as_update_vector(v)
    if vec.shape[0] != subspace.dim:
        raise DimensionMismatchError(
            f"vector has dimension {vec.shape[0]}, subspace expects {subspace.dim}"
        )
    coords = subspace.basis.T @ vec
    residual = vec - subspace.basis @ coords
    return float(np.linalg.norm(residual))


class BufferMatrix:
    """FIFO store of the most recent aggregate vectors, oldest first."""

    def __init__(self, capacity: int, dim: int | None = None):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.dim = dim
        self._rows: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._rows)

    def append(self, v) -> None:
        vec = as_update_vector(v, "buffer row")
        if self.dim is None:
            self.dim = vec.shape[0]
        elif vec.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"buffer row has dimension {vec.shape[0]}, expected {self.dim}"
            )
        self._rows.append(vec.copy())
        if len(self._rows) > self.capacity:
            del self._rows[0]

    def rows(self) -> np.ndarray:
        """Copy of the buffer contents as an (m, d) matrix, oldest first."""
        if not self._rows:
            return np.zeros((0, self.dim or 0))
        return np.stack(self._rows, axis=0)

    def clear(self) -> None:
        self._rows = []
