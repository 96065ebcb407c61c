"""Desk-scale federated training loop with attack injection and metrics.

One :class:`FederatedRun` owns a single (rule, attack, seed) cell: it samples
clients, trains them locally, lets the adversary transform the malicious
slots, aggregates, steps the global model with a unit server rate, and
evaluates. Every random choice derives from the cell's master seed through
purpose-tagged sub-seeds, so records are byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregators import Aggregator
from .attacks import Adversary, AttackContext, AttackScenario, corrupt_dataset
from .data import ClientPartition, SyntheticDataset, stamp_trigger
from .linalg import as_update_vector
from .models import ModelSpec, accuracy, init_params, loss_and_grad, predict
from .rng import derive_seed, make_rng
from .spectral_krum import SpectralKrum

__all__ = [
    "RoundRecord",
    "RunSummary",
    "local_train",
    "attack_success_rate",
    "compute_metrics",
    "FederatedRun",
]


@dataclass
class RoundRecord:
    """Per-round log entry; everything needed to regenerate summaries."""

    round: int
    sampled_clients: list[int]
    malicious_slots: list[int]
    rule: str
    attack: str
    selected_indices: list[int]
    rho: list[float] | None
    tau: float | None
    accuracy: float
    asr: float | None
    wall_time_ns: int
    seed_lineage: dict
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "round": self.round,
            "sampled_clients": self.sampled_clients,
            "malicious_slots": self.malicious_slots,
            "rule": self.rule,
            "attack": self.attack,
            "selected_indices": self.selected_indices,
            "rho": self.rho,
            "tau": self.tau,
            "accuracy": self.accuracy,
            "asr": self.asr,
            "wall_time_ns": self.wall_time_ns,
            "seed_lineage": self.seed_lineage,
            "diagnostics": self.diagnostics,
        }


@dataclass
class RunSummary:
    """Mean/best/final accuracy over a run, plus mean ASR where defined."""

    auc: float
    best_accuracy: float
    final_accuracy: float
    mean_asr: float | None
    rounds: int


def local_train(
    spec: ModelSpec,
    params: np.ndarray,
    dataset: SyntheticDataset,
    epochs: int,
    lr: float,
    weight_decay: float,
    batch_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mini-batch SGD on one client's data; returns trained - initial params."""
    theta = np.array(params, dtype=np.float64, copy=True)
    m = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            batch = order[start : start + batch_size]
            _, grad = loss_and_grad(
                spec, theta, dataset.features[batch], dataset.labels[batch], weight_decay
            )
            theta -= lr * grad
    return theta - params


def attack_success_rate(
    spec: ModelSpec,
    params: np.ndarray,
    test: SyntheticDataset,
    trigger_coords,
    trigger_value: float,
    target_class: int,
) -> float:
    """Fraction of trigger-stamped test samples (true class != target) hitting target."""
    eligible = test.labels != target_class
    if not eligible.any():
        raise ValueError("no test samples outside the target class")
    stamped = stamp_trigger(test.features[eligible], trigger_coords, trigger_value)
    return float((predict(spec, params, stamped) == target_class).mean())


def compute_metrics(records: list[RoundRecord]) -> RunSummary:
    """AUC = mean per-round accuracy; best = max; final = last; ASR averaged when present."""
    if not records:
        raise ValueError("no records to summarize")
    accs = [r.accuracy for r in records]
    asrs = [r.asr for r in records if r.asr is not None]
    return RunSummary(
        auc=float(np.mean(accs)),
        best_accuracy=float(np.max(accs)),
        final_accuracy=float(accs[-1]),
        mean_asr=float(np.mean(asrs)) if asrs else None,
        rounds=len(records),
    )


class FederatedRun:
    """One experiment cell: a rule defending a training run under one attack."""

    def __init__(
        self,
        spec: ModelSpec,
        train: SyntheticDataset,
        test: SyntheticDataset,
        partition: ClientPartition,
        aggregator: Aggregator,
        scenario: AttackScenario,
        master_seed: int,
        clients_per_round: int,
        attacker_count: int,
        local_epochs: int = 1,
        lr: float = 0.01,
        weight_decay: float = 5e-4,
        batch_size: int = 32,
    ):
        if clients_per_round > len(partition.client_indices):
            raise ValueError("cannot sample more clients than exist")
        if attacker_count > clients_per_round:
            raise ValueError("attacker_count cannot exceed clients_per_round")
        self.spec = spec
        self.train = train
        self.test = test
        self.partition = partition
        self.aggregator = aggregator
        self.scenario = scenario
        self.master_seed = int(master_seed)
        self.n = clients_per_round
        self.attacker_count = attacker_count
        self.local_epochs = local_epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size

        surrogate_cfg = (
            aggregator.config if isinstance(aggregator, SpectralKrum) else None
        )
        self.adversary = Adversary(scenario, surrogate_cfg)
        self.global_params = self._init_global()
        self.round_index = 0

    def _init_global(self) -> np.ndarray:
        return init_params(self.spec, derive_seed(self.master_seed, "model_init"))

    def _client_dataset(self, client_id: int) -> SyntheticDataset:
        return self.train.subset(self.partition.client_indices[client_id])

    def _train_client(self, client_id: int, dataset: SyntheticDataset, t: int) -> np.ndarray:
        rng = make_rng(derive_seed(self.master_seed, "round", t, "client", client_id, "train"))
        return local_train(
            self.spec,
            self.global_params,
            dataset,
            self.local_epochs,
            self.lr,
            self.weight_decay,
            self.batch_size,
            rng,
        )

    def run_round(self) -> RoundRecord:
        t = self.round_index
        scenario = self.scenario
        self.adversary.observe_global(self.global_params)

        sample_rng = make_rng(derive_seed(self.master_seed, "round", t, "sample"))
        sampled = sorted(
            int(c) for c in sample_rng.choice(len(self.partition.client_indices), self.n, replace=False)
        )
        mal_rng = make_rng(derive_seed(self.master_seed, "round", t, "malicious"))
        f_actual = self.attacker_count if scenario.kind != "none" else 0
        mal_slots = sorted(int(s) for s in mal_rng.choice(self.n, f_actual, replace=False))
        mal_set = set(mal_slots)

        updates = np.zeros((self.n, self.spec.dim))
        benign_of_malicious = []
        for slot, client in enumerate(sampled):
            data = self._client_dataset(client)
            if slot in mal_set and scenario.is_data_layer:
                data = corrupt_dataset(
                    scenario,
                    data,
                    self.spec.num_classes,
                    derive_seed(self.master_seed, "round", t, "client", client, "corrupt"),
                )
            updates[slot] = self._train_client(client, data, t)
            if slot in mal_set:
                benign_of_malicious.append(updates[slot])

        attack_diag: dict = {}
        if mal_slots and not scenario.is_data_layer and scenario.kind != "none":
            honest = updates[[s for s in range(self.n) if s not in mal_set]]
            stats = (honest.mean(axis=0), honest.std(axis=0)) if len(honest) else None
            view = None
            if scenario.knowledge == "oracle" and isinstance(self.aggregator, SpectralKrum):
                view = self.aggregator.peek_subspace()
            ctx = AttackContext(
                benign_updates=np.stack(benign_of_malicious),
                honest_stats=stats,
                defense_view=view,
                round_index=t,
                global_model=self.global_params,
            )
            crafted, attack_diag = self.adversary.craft(ctx)
            for row, slot in enumerate(mal_slots):
                updates[slot] = crafted[row]

        agg_rng = make_rng(derive_seed(self.master_seed, "round", t, "aggregate"))
        result = self.aggregator.aggregate(list(updates), agg_rng)
        self.global_params = self.global_params + as_update_vector(result.aggregate)

        acc = accuracy(self.spec, self.global_params, self.test.features, self.test.labels)
        asr = None
        if scenario.kind == "semantic_backdoor":
            p = scenario.params
            asr = attack_success_rate(
                self.spec,
                self.global_params,
                self.test,
                p["trigger_coords"],
                p["trigger_value"],
                p["target_class"],
            )

        diag = dict(result.diagnostics)
        diag.update(attack_diag)
        record = RoundRecord(
            round=t,
            sampled_clients=sampled,
            malicious_slots=mal_slots,
            rule=self.aggregator.name,
            attack=scenario.kind,
            selected_indices=list(result.selected_indices),
            rho=diag.pop("rho", None),
            tau=diag.pop("tau", None),
            accuracy=acc,
            asr=asr,
            wall_time_ns=result.wall_time_ns,
            seed_lineage={
                "master_seed": self.master_seed,
                "round_tag": ["round", t],
                "purposes": ["sample", "malicious", "train", "corrupt", "aggregate"],
            },
            diagnostics=_json_safe(diag),
        )
        self.round_index += 1
        return record

    def run(self, rounds: int) -> list[RoundRecord]:
        return [self.run_round() for _ in range(rounds)]


def _json_safe(obj):
    """Recursively convert numpy scalars/arrays so records serialize cleanly."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_safe(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj
