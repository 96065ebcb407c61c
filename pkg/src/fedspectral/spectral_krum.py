"""Spectral-subspace Krum: stateful aggregation over a history of aggregates.

The rule keeps a FIFO buffer of its own past outputs, periodically fits a
trimmed PCA subspace plus an orthogonal-energy threshold to that history,
projects each round's updates into the subspace, runs Krum selection in the
compressed coordinates, drops selected candidates whose residual energy
exceeds the threshold, and averages the survivors in the original space.
Early rounds (and rounds where the buffer cannot support a subspace) fall
back to the coordinate-wise median.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .aggregators import AggregationResult, Aggregator, _clamped_krum_scores, _score_order
from .linalg import (
    BufferMatrix,
    SubspaceModel,
    as_update_matrix,
    coordinate_median,
    nearest_rank_quantile,
    pca_topk,
)

__all__ = ["SpectralKrumConfig", "SpectralKrumState", "build_subspace", "SpectralKrum"]

_CENTERINGS = ("mean", "median")


@dataclass
class SpectralKrumConfig:
    """Hyperparameters; defaults follow the published stable configuration."""

    r: int = 50
    B: int = 50
    centering: str = "mean"
    trim_mode: str = "two_sided"
    trim_frac: float = 0.1
    q: float = 0.98
    warmup_rounds: int = 3
    pca_refresh_interval: int = 1
    guard_min_kept: int = 1
    f_byzantine: int = 2
    center_before_project: bool = False
    selection_size: int | None = None

    def __post_init__(self):
        if self.r < 1 or self.B < 1:
            raise ValueError("r and B must be positive")
        if self.centering not in _CENTERINGS:
            raise ValueError(f"centering must be one of {_CENTERINGS}, got {self.centering!r}")
        if self.trim_mode != "two_sided":
            raise ValueError(f"only two_sided trimming is supported, got {self.trim_mode!r}")
        if not (0.0 <= self.trim_frac < 0.5):
            raise ValueError(f"trim_frac must lie in [0, 0.5), got {self.trim_frac}")
        if not (0.0 < self.q <= 1.0):
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.warmup_rounds < 0:
            raise ValueError("warmup_rounds must be nonnegative")
        if self.pca_refresh_interval < 1:
            raise ValueError("pca_refresh_interval must be positive")
        if self.guard_min_kept < 1:
            raise ValueError("guard_min_kept must be positive")
        if self.f_byzantine < 0:
            raise ValueError("f_byzantine must be nonnegative")
        if self.selection_size is not None and self.selection_size < 1:
            raise ValueError("selection_size must be positive when given")


@dataclass
class SpectralKrumState:
    """Mutable per-run state: the buffer, round counter, and cached subspace."""

    buffer: BufferMatrix
    round_counter: int = 0
    cached_subspace: SubspaceModel | None = None
    config: SpectralKrumConfig = field(default_factory=SpectralKrumConfig)


def _trim_two_sided(norms: np.ndarray, k: int) -> np.ndarray:
    """Boolean survivor mask after dropping k smallest- and k largest-norm rows.

    Norm ties are broken older-first (lower buffer position trimmed first).
    """
    m = norms.shape[0]
    positions = np.arange(m)
    drop = np.zeros(m, dtype=bool)
    if k > 0:
        drop[np.lexsort((positions, norms))[:k]] = True
        drop[np.lexsort((positions, -norms))[:k]] = True
    return ~drop


def build_subspace(buffer, config: SpectralKrumConfig) -> SubspaceModel | None:
    """Fit the benign subspace and residual threshold from the buffer, or None.

    Rows are centered (mean or median), trimmed two-sided by centered-row norm,
    and the survivors feed a rank-clamped PCA. The threshold tau is the
    nearest-rank q-quantile of orthogonal energies of ALL buffer rows against
    that basis, so trimmed rows still inform the benign residual scale.
    Returns None when the buffer is empty or fewer than two rows survive
    trimming; callers fall back to the coordinate median.
    """
    rows = buffer.rows() if isinstance(buffer, BufferMatrix) else np.asarray(buffer, dtype=np.float64)
    m = rows.shape[0]
    if m == 0:
        return None

    if config.centering == "mean":
        center = rows.mean(axis=0)
    else:
        center = coordinate_median(rows)
    centered = rows - center

    norms = np.linalg.norm(centered, axis=1)
    survivors = _trim_two_sided(norms, int(np.floor(config.trim_frac * m)))
    trimmed = centered[survivors]
    if trimmed.shape[0] < 2:
        return None

    basis = pca_topk(trimmed, config.r)
    if basis.shape[1] == 0:
        return None

    target = centered if config.center_before_project else rows
    residuals = np.linalg.norm(target - (target @ basis) @ basis.T, axis=1)
    tau = nearest_rank_quantile(residuals, config.q)
    return SubspaceModel(basis=basis, center=center, tau=tau, rank=basis.shape[1])


class SpectralKrum(Aggregator):
    """Stateful spectral-Krum aggregator implementing the uniform rule interface."""

    def __init__(self, config: SpectralKrumConfig | None = None):
        self.name = "spectral_krum"
        self.config = config or SpectralKrumConfig()
        self.state = SpectralKrumState(buffer=BufferMatrix(self.config.B), config=self.config)

    def reset(self) -> None:
        """Empty the buffer, zero the round counter, drop the cached subspace."""
        self.state.buffer.clear()
        self.state.round_counter = 0
        self.state.cached_subspace = None

    def _refresh_due(self) -> bool:
        return (
            self.state.cached_subspace is None
            or self.state.round_counter % self.config.pca_refresh_interval == 0
        )

    def peek_subspace(self) -> SubspaceModel | None:
        """The subspace the NEXT aggregate call will use, without mutating state.

        Returns None during warmup or when the buffer cannot support PCA. Used
        by oracle-knowledge adversaries, which see exactly what the defense
        sees (the build is deterministic, so the preview matches bit-for-bit).
        """
        if self.state.round_counter < self.config.warmup_rounds:
            return None
        if self._refresh_due():
            return build_subspace(self.state.buffer, self.config)
        return self.state.cached_subspace

    def aggregate(self, updates, rng: np.random.Generator | None = None) -> AggregationResult:
        start = time.perf_counter_ns()
        cfg = self.config
        state = self.state
        x = as_update_matrix(updates)
        n = x.shape[0]

        warming_up = state.round_counter < cfg.warmup_rounds
        build_ns = 0
        if not warming_up and self._refresh_due():
            t0 = time.perf_counter_ns()
            state.cached_subspace = build_subspace(state.buffer, cfg)
            build_ns = time.perf_counter_ns() - t0
        sub = None if warming_up else state.cached_subspace

        diag: dict = {"round": state.round_counter, "subspace_build_ns": build_ns}
        if sub is None:
            # Fallback: median aggregation, residuals defined as zero.
            agg = coordinate_median(x)
            selected = list(range(n))
            diag.update(
                {
                    "fallback": "warmup" if warming_up else "insufficient_buffer",
                    "rho": [0.0] * n,
                    "tau": None,
                    "selection": None,
                    "guard_kept": None,
                    "effective_rank": None,
                }
            )
            scores = None
        else:
            w = (x - sub.center) if cfg.center_before_project else x
            coords = w @ sub.basis
            rho = np.linalg.norm(w - coords @ sub.basis.T, axis=1)

            k_sel = cfg.selection_size if cfg.selection_size is not None else n - cfg.f_byzantine - 2
            k_sel = max(1, min(n, k_sel))
            if n == 1:
                selection = np.array([0])
                scores = np.zeros(1)
                clamped = n < cfg.f_byzantine + 3
            else:
                scores, clamped = _clamped_krum_scores(coords, cfg.f_byzantine)
                selection = _score_order(scores)[:k_sel]

            guard = [int(i) for i in selection if rho[i] <= sub.tau]
            guard_fallback = len(guard) < cfg.guard_min_kept
            if guard_fallback:
                k_keep = min(cfg.guard_min_kept, len(selection))
                by_rho = np.lexsort((selection, rho[selection]))
                guard = [int(selection[j]) for j in by_rho[:k_keep]]

            agg = x[guard].mean(axis=0)
            selected = guard
            diag.update(
                {
                    "fallback": None,
                    "rho": [float(v) for v in rho],
                    "tau": float(sub.tau),
                    "selection": [int(i) for i in selection],
                    "guard_kept": list(guard),
                    "guard_fallback": guard_fallback,
                    "effective_rank": int(sub.rank),
                }
            )
            if clamped:
                diag["selection_clamped"] = True

        state.buffer.append(agg)
        state.round_counter += 1
        return AggregationResult(
            agg,
            selected,
            scores=scores,
            wall_time_ns=time.perf_counter_ns() - start,
            diagnostics=diag,
        )
