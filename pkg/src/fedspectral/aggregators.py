"""Byzantine-robust aggregation rules behind one uniform interface.

Every rule maps n client update vectors to one aggregate plus diagnostics:
selected client indices, optional per-client scores, and wall-clock time.
Stable rule names for config files: ``mean``, ``trimmed_mean``,
``coord_median``, ``geometric_median``, ``full_krum``, ``multi_krum``,
``bulyan``, ``dnc_pmf``, ``dnc_cluster``, ``spectral_krum``.

Tie-breaks everywhere go to the lowest client index; rules that average a
selected subset sum in selection order, which makes outputs bit-stable under
input permutation whenever scores are distinct.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import (
    as_update_matrix,
    coordinate_median,
    pairwise_sq_distances,
    pca_topk,
)

__all__ = [
    "AggregationResult",
    "RuleConfig",
    "mean_rule",
    "trimmed_mean",
    "coord_median_rule",
    "geometric_median",
    "krum_scores",
    "full_krum",
    "multi_krum",
    "bulyan",
    "dnc_pmf",
    "dnc_cluster",
    "Aggregator",
    "RULE_NAMES",
    "make_aggregator",
]


@dataclass
class AggregationResult:
    """One rule invocation: the aggregate plus selection diagnostics."""

    aggregate: np.ndarray
    selected_indices: list[int]
    scores: np.ndarray | None = None
    wall_time_ns: int = 0
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RuleConfig:
    """Knobs shared by the baseline rules.

    ``multikrum_m`` and ``bulyan_beta`` default to None, meaning the standard
    derived values (n - f - 2 and min(f, (theta-1)//2)) are used at call time.
    """

    f_byzantine: int = 2
    trim_frac: float = 0.2
    multikrum_m: int | None = None
    bulyan_beta: int | None = None
    weiszfeld_tol: float = 1e-8
    weiszfeld_max_iter: int = 1000
    dnc_rank: int = 2
    dnc_filter_frac: float = 1.0
    dnc_power_iters: int = 100
    dnc_kmeans_restarts: int = 10
    dnc_kmeans_iters: int = 50

    def __post_init__(self):
        if self.f_byzantine < 0:
            raise ValueError(f"f_byzantine must be nonnegative, got {self.f_byzantine}")
        if not (0.0 <= self.trim_frac < 0.5):
            raise ValueError(f"trim_frac must lie in [0, 0.5), got {self.trim_frac}")
        if not (0.0 < self.dnc_filter_frac <= 1.0):
            raise ValueError(
                f"dnc_filter_frac must lie in (0, 1], got {self.dnc_filter_frac}"
            )
        if self.weiszfeld_tol <= 0 or self.weiszfeld_max_iter < 1:
            raise ValueError("weiszfeld_tol must be > 0 and weiszfeld_max_iter >= 1")


def mean_rule(updates) -> AggregationResult:
    """Undefended reference: plain coordinate-wise mean of all updates."""
    x = as_update_matrix(updates)
    return AggregationResult(x.mean(axis=0), list(range(x.shape[0])))


def trimmed_mean(updates, trim_frac: float) -> AggregationResult:
    """Per coordinate: drop floor(trim_frac*n) values from each end, average the rest."""
    x = as_update_matrix(updates)
    n = x.shape[0]
    if not (0.0 <= trim_frac < 0.5):
        raise ValueError(
            f"trim_frac must lie in [0, 0.5) so each coordinate keeps a value, "
            f"got {trim_frac}"
        )
    k = int(np.floor(trim_frac * n))
    srt = np.sort(x, axis=0)
    agg = srt[k : n - k].mean(axis=0)
    return AggregationResult(agg, list(range(n)), diagnostics={"trimmed_per_side": k})


def coord_median_rule(updates) -> AggregationResult:
    """Coordinate-wise median; selection is per-coordinate, so all indices count."""
    x = as_update_matrix(updates)
    return AggregationResult(coordinate_median(x), list(range(x.shape[0])))


def _l1_objective(points: np.ndarray, y: np.ndarray) -> float:
    return float(np.linalg.norm(points - y, axis=1).sum())


def geometric_median(
    updates, tol: float = 1e-8, max_iter: int = 1000
) -> AggregationResult:
    """Weiszfeld iteration for argmin_v sum_i ||v - d_i||, with anchor handling.

    Starts from the coordinate median. When the iterate lands on a data point
    (within 1e-12) the subgradient optimality test decides whether to stop
    there; otherwise the Vardi-Zhang step continues past the anchor. Stops when
    the displacement drops below tol*(1+||iterate||). Points are processed in
    lexicographic order so the result is independent of input permutation.
    """
    x = as_update_matrix(updates)
    n = x.shape[0]
    if n == 1:
        return AggregationResult(
            x[0].copy(), [0], diagnostics={"converged": True, "iterations": 0}
        )
    pts = x[np.lexsort(x.T[::-1])]

    y = np.median(pts, axis=0)
    trace = [_l1_objective(pts, y)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        diff = pts - y
        dist = np.linalg.norm(diff, axis=1)
        anchored = dist < 1e-12
        n_anchored = int(anchored.sum())
        if n_anchored:
            moving = ~anchored
            if not moving.any():
                converged = True
                break
            w = 1.0 / dist[moving]
            r_vec = (pts[moving] * w[:, None]).sum(axis=0) - y * w.sum()
            r_norm = float(np.linalg.norm(r_vec))
            if r_norm <= n_anchored:
                converged = True
                break
            t_point = (pts[moving] * w[:, None]).sum(axis=0) / w.sum()
            r_inv = n_anchored / r_norm
            y_new = max(0.0, 1.0 - r_inv) * t_point + min(1.0, r_inv) * y
        else:
            w = 1.0 / dist
            y_new = (pts * w[:, None]).sum(axis=0) / w.sum()
        trace.append(_l1_objective(pts, y_new))
        shift = float(np.linalg.norm(y_new - y))
        y = y_new
        if shift < tol * (1.0 + float(np.linalg.norm(y))):
            converged = True
            break

    return AggregationResult(
        y,
        list(range(n)),
        diagnostics={
            "converged": converged,
            "iterations": iterations,
            "objective_trace": trace,
        },
    )


def _nearest_neighbor_scores(x: np.ndarray, n_neighbors: int) -> np.ndarray:
    """Sum of the n_neighbors smallest squared distances from each row to the others."""
    d2 = pairwise_sq_distances(x)
    np.fill_diagonal(d2, np.inf)
    return np.sort(d2, axis=1)[:, :n_neighbors].sum(axis=1)


def krum_scores(updates_or_projections, f: int) -> np.ndarray:
    """Krum scores: sum of squared distances to the n-f-2 nearest neighbors."""
    x = as_update_matrix(updates_or_projections)
    n = x.shape[0]
    if n < f + 3:
        raise ValueError(f"Krum needs n >= f + 3, got n={n}, f={f}")
    return _nearest_neighbor_scores(x, n - f - 2)


def _score_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by (score, client index): deterministic tie-breaks."""
    return np.lexsort((np.arange(scores.shape[0]), scores))


def _clamped_krum_scores(x: np.ndarray, f: int) -> tuple[np.ndarray, bool]:
    """Krum scores with the neighbor count clamped into [1, n-1].

    Returns (scores, clamped_flag); the flag marks inputs too small for the
    textbook n >= f + 3 precondition.
    """
    n = x.shape[0]
    wanted = n - f - 2
    n_neighbors = max(1, min(n - 1, wanted))
    return _nearest_neighbor_scores(x, n_neighbors), wanted != n_neighbors


def full_krum(updates, f: int) -> AggregationResult:
    """Select the single update with the smallest Krum score."""
    x = as_update_matrix(updates)
    n = x.shape[0]
    if n == 1:
        return AggregationResult(x[0].copy(), [0])
    scores, clamped = _clamped_krum_scores(x, f)
    winner = int(_score_order(scores)[0])
    diag = {"neighbor_clamped": clamped} if clamped else {}
    return AggregationResult(x[winner].copy(), [winner], scores=scores, diagnostics=diag)


def multi_krum(updates, f: int, m: int | None = None) -> AggregationResult:
    """Average the m lowest-score updates (default m = n - f - 2)."""
    x = as_update_matrix(updates)
    n = x.shape[0]
    if n == 1:
        return AggregationResult(x[0].copy(), [0])
    if m is None:
        m = n - f - 2
    m = max(1, min(n, m))
    scores, clamped = _clamped_krum_scores(x, f)
    selected = _score_order(scores)[:m]
    agg = x[selected].mean(axis=0)
    diag = {"neighbor_clamped": clamped} if clamped else {}
    return AggregationResult(agg, [int(i) for i in selected], scores=scores, diagnostics=diag)


def bulyan(updates, f: int, beta: int | None = None) -> AggregationResult:
    """Iterated Krum selection of n-2f candidates, then coordinate-wise trimming.

    theta = clamp(n-2f, 1, n) selection rounds; inside each round the Krum
    neighbor count is clamped to stay >= 1, so the rule is total even below the
    textbook n >= 4f+3 requirement (the clamp is reported in diagnostics).
    Per coordinate, the theta - 2*beta values closest to the coordinate median
    are averaged, beta = min(f, (theta-1)//2) unless overridden.
    """
    x = as_update_matrix(updates)
    n = x.shape[0]
    theta = int(np.clip(n - 2 * f, 1, n))
    clamp_events = theta != n - 2 * f

    selection: list[int] = []
    remaining = list(range(n))
    for _ in range(theta):
        if len(remaining) == 1:
            selection.append(remaining.pop(0))
            break
        sub = x[remaining]
        scores, clamped = _clamped_krum_scores(sub, f)
        clamp_events = clamp_events or clamped
        pick = int(_score_order(scores)[0])
        selection.append(remaining.pop(pick))

    theta = len(selection)
    beta_max = (theta - 1) // 2
    beta_eff = min(f, beta_max) if beta is None else min(beta, beta_max)
    keep = theta - 2 * beta_eff

    sel = x[selection]
    med = np.median(sel, axis=0)
    dev = np.abs(sel - med)
    order = np.argsort(dev, axis=0, kind="stable")[:keep]
    agg = np.take_along_axis(sel, order, axis=0).mean(axis=0)

    diag = {"theta": theta, "beta": beta_eff}
    if clamp_events:
        diag["clamped"] = True
    return AggregationResult(agg, selection, diagnostics=diag)


def _top_direction(centered: np.ndarray, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Leading right-singular direction of a centered stack via power iteration."""
    d = centered.shape[1]
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = centered.T @ (centered @ v)
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            break
        v = w / norm
    return v


def dnc_pmf(
    updates,
    f: int,
    rng: np.random.Generator,
    filter_frac: float = 1.0,
    power_iters: int = 100,
) -> AggregationResult:
    """Filter by projection magnitude onto the round's top principal direction.

    Scores are squared projections of mean-centered updates onto the leading
    singular direction; the ceil(filter_frac*f) highest-score clients are
    removed and the rest averaged.
    """
    x = as_update_matrix(updates)
    n = x.shape[0]
    if n == 1:
        return AggregationResult(x[0].copy(), [0])
    if n <= f:
        raise ValueError(f"DnC-PMF needs n > f, got n={n}, f={f}")
    centered = x - x.mean(axis=0)
    v = _top_direction(centered, power_iters, rng)
    scores = (centered @ v) ** 2
    n_remove = min(n - 1, int(np.ceil(filter_frac * f)))
    kept = _score_order(scores)[: n - n_remove]
    agg = x[kept].mean(axis=0)
    return AggregationResult(agg, [int(i) for i in kept], scores=scores)


def _kmeans_two(
    z: np.ndarray, restarts: int, iters: int, rng: np.random.Generator
) -> np.ndarray:
    """Seeded 2-means (Lloyd) with restarts; returns the best labeling."""
    n = z.shape[0]
    best_labels = np.zeros(n, dtype=int)
    best_inertia = np.inf
    for _ in range(restarts):
        init = rng.choice(n, size=2, replace=False)
        centers = z[init].astype(np.float64).copy()
        labels = np.zeros(n, dtype=int)
        for _ in range(iters):
            d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = np.argmin(d2, axis=1)
            if np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
            for c in (0, 1):
                members = labels == c
                if members.any():
                    centers[c] = z[members].mean(axis=0)
        d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        inertia = float(d2[np.arange(n), labels].sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels.copy()
    return best_labels


def dnc_cluster(
    updates,
    rng: np.random.Generator,
    rank: int = 2,
    kmeans_restarts: int = 10,
    kmeans_iters: int = 50,
) -> AggregationResult:
    """Project onto the round's top principal directions, 2-means, keep the majority.

    Ties in cluster size go to the cluster containing the lowest client index.
    """
    x = as_update_matrix(updates)
    n = x.shape[0]
    if n == 1:
        return AggregationResult(x[0].copy(), [0])
    centered = x - x.mean(axis=0)
    r_eff = max(1, min(rank, n - 1, x.shape[1]))
    basis = pca_topk(centered, r_eff)
    if basis.shape[1] == 0:
        z = np.zeros((n, 1))
    else:
        z = centered @ basis
    labels = _kmeans_two(z, kmeans_restarts, kmeans_iters, rng)

    size0 = int((labels == 0).sum())
    size1 = n - size0
    if size0 != size1:
        majority = 0 if size0 > size1 else 1
    else:
        majority = int(labels[0])
    members = [int(i) for i in np.flatnonzero(labels == majority)]
    agg = x[members].mean(axis=0)
    return AggregationResult(
        agg, members, diagnostics={"cluster_sizes": [size0, size1]}
    )


class Aggregator:
    """Uniform callable wrapper: (updates, rng) -> timed AggregationResult.

    Stateless rules share this class directly; stateful rules (the spectral
    defense) subclass it and override :meth:`reset`.
    """

    def __init__(self, name: str, fn: Callable[..., AggregationResult]):
        self.name = name
        self._fn = fn

    def aggregate(self, updates, rng: np.random.Generator | None = None) -> AggregationResult:
        start = time.perf_counter_ns()
        result = self._run(updates, rng)
        result.wall_time_ns = time.perf_counter_ns() - start
        return result

    def _run(self, updates, rng) -> AggregationResult:
        return self._fn(updates, rng)

    def reset(self) -> None:
        """Stateless rules have nothing to reset."""


RULE_NAMES = [
    "mean",
    "trimmed_mean",
    "coord_median",
    "geometric_median",
    "full_krum",
    "multi_krum",
    "bulyan",
    "dnc_pmf",
    "dnc_cluster",
    "spectral_krum",
]


def make_aggregator(name: str, config: RuleConfig | None = None, spectral_config=None) -> Aggregator:
    """Build an aggregator by stable rule name.

    ``spectral_config`` is only consulted for ``spectral_krum`` (a
    :class:`~fedspectral.spectral_krum.SpectralKrumConfig`); the import is
    deferred to avoid a cycle.
    """
    cfg = config or RuleConfig()
    f = cfg.f_byzantine
    if name == "mean":
        return Aggregator(name, lambda u, r: mean_rule(u))
    if name == "trimmed_mean":
        return Aggregator(name, lambda u, r: trimmed_mean(u, cfg.trim_frac))
    if name == "coord_median":
        return Aggregator(name, lambda u, r: coord_median_rule(u))
    if name == "geometric_median":
        return Aggregator(
            name,
            lambda u, r: geometric_median(u, cfg.weiszfeld_tol, cfg.weiszfeld_max_iter),
        )
    if name == "full_krum":
        return Aggregator(name, lambda u, r: full_krum(u, f))
    if name == "multi_krum":
        return Aggregator(name, lambda u, r: multi_krum(u, f, cfg.multikrum_m))
    if name == "bulyan":
        return Aggregator(name, lambda u, r: bulyan(u, f, cfg.bulyan_beta))
    if name == "dnc_pmf":
        return Aggregator(
            name,
            lambda u, r: dnc_pmf(u, f, _require_rng(r), cfg.dnc_filter_frac, cfg.dnc_power_iters),
        )
    if name == "dnc_cluster":
        return Aggregator(
            name,
            lambda u, r: dnc_cluster(
                u, _require_rng(r), cfg.dnc_rank, cfg.dnc_kmeans_restarts, cfg.dnc_kmeans_iters
            ),
        )
    if name == "spectral_krum":
        from .spectral_krum import SpectralKrum, SpectralKrumConfig

        return SpectralKrum(spectral_config or SpectralKrumConfig(f_byzantine=f))
    raise KeyError(f"unknown rule name: {name!r} (known: {RULE_NAMES})")


def _require_rng(rng: np.random.Generator | None) -> np.random.Generator:
    if rng is None:
        raise ValueError("this rule needs a seeded rng; pass one explicitly")
    return rng
