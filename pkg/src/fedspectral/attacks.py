"""The attack suite: policies that turn benign client behavior malicious.

Update-layer attacks (sign_flip, min_max, buffer_drift, adaptive_steer)
transform the updates malicious clients would honestly have sent; data-layer
attacks (label_flip, semantic_backdoor) corrupt local datasets before
training, so the malicious update is a real gradient. All malicious clients
in a round submit identical vectors for update-layer attacks (the strongest
collusive instantiation). Stable config names: ``none``, ``sign_flip``,
``label_flip``, ``min_max``, ``buffer_drift``, ``adaptive_steer``,
``semantic_backdoor``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SyntheticDataset, stamp_trigger
from .linalg import BufferMatrix, SubspaceModel, as_update_matrix, as_update_vector
from .rng import make_rng
from .spectral_krum import SpectralKrumConfig, build_subspace

__all__ = [
    "ATTACK_NAMES",
    "DATA_LAYER_ATTACKS",
    "UPDATE_LAYER_ATTACKS",
    "AttackScenario",
    "AttackContext",
    "sign_flip",
    "label_flip",
    "min_max",
    "buffer_drift",
    "adaptive_steer",
    "semantic_backdoor",
    "apply_attack",
    "corrupt_dataset",
    "Adversary",
]

ATTACK_NAMES = [
    "none",
    "sign_flip",
    "label_flip",
    "min_max",
    "buffer_drift",
    "adaptive_steer",
    "semantic_backdoor",
]
DATA_LAYER_ATTACKS = {"label_flip", "semantic_backdoor"}
UPDATE_LAYER_ATTACKS = {"sign_flip", "min_max", "buffer_drift", "adaptive_steer"}

_KNOWLEDGE_LEVELS = ("oracle", "surrogate")

_PARAM_DEFAULTS: dict[str, dict] = {
    "none": {},
    "sign_flip": {"gamma": 1.0},
    "label_flip": {},
    "min_max": {"c": 1.0},
    "buffer_drift": {"eps_max": 0.5, "ramp_rounds": 50, "direction": None},
    "adaptive_steer": {"direction": None, "cap_only": False, "sign_flip_gamma": 1.0},
    "semantic_backdoor": {
        "trigger_coords": [0, 1, 2],
        "trigger_value": 3.0,
        "target_class": 0,
        "poison_frac": 0.5,
    },
}


@dataclass
class AttackScenario:
    """A named attack with validated parameters and a declared knowledge level."""

    kind: str
    params: dict = field(default_factory=dict)
    knowledge: str = "oracle"

    def __post_init__(self):
        if self.kind not in ATTACK_NAMES:
            raise ValueError(f"unknown attack kind {self.kind!r} (known: {ATTACK_NAMES})")
        if self.knowledge not in _KNOWLEDGE_LEVELS:
            raise ValueError(f"knowledge must be one of {_KNOWLEDGE_LEVELS}")
        defaults = _PARAM_DEFAULTS[self.kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown params for {self.kind}: {sorted(unknown)}")
        merged = dict(defaults)
        merged.update(self.params)
        self.params = merged
        if self.kind == "semantic_backdoor" and not (0.0 <= merged["poison_frac"] <= 1.0):
            raise ValueError("poison_frac must lie in [0, 1]")
        if self.kind == "buffer_drift" and merged["ramp_rounds"] < 1:
            raise ValueError("ramp_rounds must be >= 1")

    @property
    def is_data_layer(self) -> bool:
        return self.kind in DATA_LAYER_ATTACKS


@dataclass
class AttackContext:
    """Everything a round's attack policy may look at.

    ``benign_updates`` are what each malicious client would honestly have
    sent; ``honest_stats`` is (mean, std) over the round's benign updates;
    ``defense_view`` is the defense's own subspace snapshot (oracle knowledge
    against the spectral defense only); ``observed_deltas`` is the attacker's
    own record of global-model changes, one row per completed round.
    """

    benign_updates: np.ndarray
    honest_stats: tuple[np.ndarray, np.ndarray] | None = None
    defense_view: SubspaceModel | None = None
    round_index: int = 0
    global_model: np.ndarray | None = None
    observed_deltas: np.ndarray | None = None


def sign_flip(ctx: AttackContext, gamma: float = 1.0) -> np.ndarray:
    """Each malicious client negates and scales its own benign update: -gamma*b."""
    b = as_update_matrix(ctx.benign_updates)
    return -gamma * b


def label_flip(dataset: SyntheticDataset, num_classes: int) -> SyntheticDataset:
    """Cyclic label permutation y <- (y+1) mod C; features untouched."""
    return SyntheticDataset(
        dataset.features, (dataset.labels + 1) % num_classes, dataset.params
    )


def min_max(ctx: AttackContext, c: float = 1.0) -> np.ndarray:
    """All malicious clients send mean - c*std of the round's benign updates."""
    if ctx.honest_stats is None:
        raise ValueError("min_max needs honest statistics in the context")
    mu, sigma = ctx.honest_stats
    crafted = as_update_vector(mu) - c * as_update_vector(sigma)
    return np.tile(crafted, (len(ctx.benign_updates), 1))


def _default_drift_direction(ctx: AttackContext) -> np.ndarray:
    """Negated, unit-normalized running mean of observed global-model deltas."""
    deltas = ctx.observed_deltas
    if deltas is None or len(deltas) == 0:
        return np.zeros_like(np.asarray(ctx.benign_updates[0], dtype=np.float64))
    v = -np.asarray(deltas, dtype=np.float64).mean(axis=0)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def buffer_drift(
    ctx: AttackContext,
    eps_max: float = 0.5,
    ramp_rounds: int = 50,
    direction: np.ndarray | None = None,
) -> np.ndarray:
    """Benign update plus a slowly ramped push along an adversarial direction.

    eps_t = eps_max * min(1, t / ramp_rounds), so round 0 is exactly benign
    and the push saturates at eps_max after ramp_rounds.
    """
    b = as_update_matrix(ctx.benign_updates)
    v = _default_drift_direction(ctx) if direction is None else as_update_vector(direction)
    eps = eps_max * min(1.0, ctx.round_index / ramp_rounds)
    return b + eps * v


def _steer_from_subspace(
    sub: SubspaceModel, v_adv: np.ndarray, cap_only: bool
) -> np.ndarray:
    """Split v_adv against the subspace and rescale the orthogonal part to tau."""
    coords = sub.basis.T @ v_adv
    v_par = sub.basis @ coords
    v_perp = v_adv - v_par
    perp_norm = float(np.linalg.norm(v_perp))
    if cap_only and perp_norm <= sub.tau:
        scaled = v_perp
    else:
        scaled = (sub.tau / (perp_norm + 1e-12)) * v_perp
    return v_par + scaled


def adaptive_steer(
    ctx: AttackContext,
    direction: np.ndarray | None = None,
    cap_only: bool = False,
    knowledge: str = "oracle",
    surrogate_config: SpectralKrumConfig | None = None,
    sign_flip_gamma: float = 1.0,
) -> tuple[np.ndarray, dict]:
    """Subspace-aware steering: in-subspace poison plus tau-matched residual.

    Oracle knowledge reads the defense's own subspace snapshot from the
    context; surrogate knowledge rebuilds an estimate from the attacker's
    observed global-model deltas using the same subspace construction the
    defense runs. When no estimate is available (defense warmup), the round
    degrades to sign_flip; the returned diagnostics say which path fired.
    """
    b = as_update_matrix(ctx.benign_updates)
    if knowledge == "oracle":
        sub = ctx.defense_view
    else:
        sub = None
        deltas = ctx.observed_deltas
        if deltas is not None and len(deltas) >= 2:
            cfg = surrogate_config or SpectralKrumConfig()
            history = BufferMatrix(cfg.B, dim=b.shape[1])
            for row in np.asarray(deltas)[-cfg.B :]:
                history.append(row)
            sub = build_subspace(history, cfg)
    if sub is None:
        return sign_flip(ctx, sign_flip_gamma), {"steer_fallback": "sign_flip"}

    if direction is None:
        if ctx.honest_stats is not None:
            v_adv = -as_update_vector(ctx.honest_stats[0])
        else:
            v_adv = -b.mean(axis=0)
    else:
        v_adv = as_update_vector(direction)
    crafted = _steer_from_subspace(sub, v_adv, cap_only)
    return np.tile(crafted, (b.shape[0], 1)), {"steer_fallback": None}


def semantic_backdoor(
    dataset: SyntheticDataset,
    trigger_coords,
    trigger_value: float,
    target_class: int,
    poison_frac: float,
    rng: np.random.Generator,
) -> SyntheticDataset:
    """Stamp a feature trigger onto a seeded fraction of samples, relabel to target."""
    m = len(dataset)
    n_poison = int(round(poison_frac * m))
    if n_poison == 0:
        return dataset
    chosen = rng.choice(m, size=n_poison, replace=False)
    feats = np.array(dataset.features, copy=True)
    labels = np.array(dataset.labels, copy=True)
    feats[chosen] = stamp_trigger(feats[chosen], trigger_coords, trigger_value)
    labels[chosen] = target_class
    return SyntheticDataset(feats, labels, dataset.params)


def corrupt_dataset(
    scenario: AttackScenario,
    dataset: SyntheticDataset,
    num_classes: int,
    seed: int,
) -> SyntheticDataset:
    """Apply a data-layer attack to one malicious client's local dataset."""
    if scenario.kind == "label_flip":
        return label_flip(dataset, num_classes)
    if scenario.kind == "semantic_backdoor":
        p = scenario.params
        return semantic_backdoor(
            dataset,
            p["trigger_coords"],
            p["trigger_value"],
            p["target_class"],
            p["poison_frac"],
            make_rng(seed),
        )
    raise ValueError(f"{scenario.kind} is not a data-layer attack")


def apply_attack(
    scenario: AttackScenario,
    ctx: AttackContext,
    surrogate_config: SpectralKrumConfig | None = None,
) -> tuple[np.ndarray, dict]:
    """Produce the final updates for the malicious slots, plus diagnostics.

    Data-layer attacks and ``none`` pass the (already trained) updates through
    unchanged; update-layer attacks transform them. Returns an (f, d) array
    even when f = 0.
    """
    b = np.asarray(ctx.benign_updates, dtype=np.float64)
    if b.shape[0] == 0:
        return b, {}
    p = scenario.params
    if scenario.kind == "none" or scenario.is_data_layer:
        return b, {}
    if scenario.kind == "sign_flip":
        return sign_flip(ctx, p["gamma"]), {}
    if scenario.kind == "min_max":
        return min_max(ctx, p["c"]), {}
    if scenario.kind == "buffer_drift":
        return buffer_drift(ctx, p["eps_max"], p["ramp_rounds"], p["direction"]), {}
    if scenario.kind == "adaptive_steer":
        return adaptive_steer(
            ctx,
            direction=p["direction"],
            cap_only=p["cap_only"],
            knowledge=scenario.knowledge,
            surrogate_config=surrogate_config,
            sign_flip_gamma=p["sign_flip_gamma"],
        )
    raise ValueError(f"unhandled attack kind {scenario.kind!r}")


class Adversary:
    """Stateful per-run wrapper: tracks what the attacker has observed.

    The attacker sees every global-model broadcast (white-box threat model)
    and keeps the delta history that powers buffer_drift's default direction
    and adaptive_steer's surrogate subspace.
    """

    def __init__(self, scenario: AttackScenario, surrogate_config: SpectralKrumConfig | None = None):
        self.scenario = scenario
        self.surrogate_config = surrogate_config
        self._observed: list[np.ndarray] = []

    def observe_global(self, params: np.ndarray) -> None:
        self._observed.append(np.array(params, dtype=np.float64, copy=True))

    def observed_deltas(self) -> np.ndarray | None:
        if len(self._observed) < 2:
            return None
        stack = np.stack(self._observed, axis=0)
        return np.diff(stack, axis=0)

    def craft(self, ctx: AttackContext) -> tuple[np.ndarray, dict]:
        ctx.observed_deltas = self.observed_deltas()
        return apply_attack(self.scenario, ctx, self.surrogate_config)
