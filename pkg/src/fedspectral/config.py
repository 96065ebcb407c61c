"""Experiment configuration: JSON schema, defaults, validation, hashing.

A config file is a single JSON object; every field is optional and falls back
to the defaults below (which mirror the published protocol: 100 clients,
Dirichlet alpha 0.1, 10 sampled per round, 2 attackers, lr 0.01, weight decay
5e-4). The ``spectral_krum`` block mirrors SpectralKrumConfig field names
exactly. ``validate`` raises ConfigError with a readable message; the CLI
maps that to exit code 2.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .aggregators import RULE_NAMES, RuleConfig
from .attacks import ATTACK_NAMES, AttackScenario
from .spectral_krum import SpectralKrumConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "config_hash"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    # dataset
    num_classes: int = 10
    num_features: int = 32
    train_size: int = 4000
    test_size: int = 2000
    noise: float = 0.3
    # partition
    num_clients: int = 100
    dirichlet_alpha: float = 0.1
    # model
    model_kind: str = "logistic"
    hidden: int = 32
    # local training
    local_epochs: int = 1
    lr: float = 0.01
    weight_decay: float = 5e-4
    batch_size: int = 32
    # federation
    clients_per_round: int = 10
    attacker_count: int = 2
    rounds: int = 100
    # matrix
    rules: list[str] = field(default_factory=lambda: list(RULE_NAMES))
    attacks: list[str] = field(default_factory=lambda: list(ATTACK_NAMES))
    seeds: list[int] = field(default_factory=lambda: [1])
    # per-rule blocks
    rule_config: dict = field(default_factory=dict)
    spectral_krum: dict = field(default_factory=dict)
    attack_params: dict = field(default_factory=dict)
    attack_knowledge: str = "oracle"
    # output
    output_dir: str = "results"
    smoke_band: float = 0.15

    def validate(self) -> None:
        if not self.rules:
            raise ConfigError("rules list is empty")
        if not self.attacks:
            raise ConfigError("attacks list is empty")
        for r in self.rules:
            if r not in RULE_NAMES:
                raise ConfigError(f"unknown rule {r!r} (known: {RULE_NAMES})")
        for a in self.attacks:
            if a not in ATTACK_NAMES:
                raise ConfigError(f"unknown attack {a!r} (known: {ATTACK_NAMES})")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.attacker_count > self.clients_per_round:
            raise ConfigError("attacker_count cannot exceed clients_per_round")
        if self.clients_per_round > self.num_clients:
            raise ConfigError("clients_per_round cannot exceed num_clients")
        try:
            self.make_rule_config()
            self.make_spectral_config()
            for a in self.attacks:
                self.make_scenario(a)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def make_rule_config(self) -> RuleConfig:
        kwargs = {"f_byzantine": self.attacker_count}
        kwargs.update(self.rule_config)
        return RuleConfig(**kwargs)

    def make_spectral_config(self) -> SpectralKrumConfig:
        kwargs = {"f_byzantine": self.attacker_count}
        kwargs.update(self.spectral_krum)
        return SpectralKrumConfig(**kwargs)

    def make_scenario(self, attack: str) -> AttackScenario:
        return AttackScenario(
            kind=attack,
            params=dict(self.attack_params.get(attack, {})),
            knowledge=self.attack_knowledge,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return ExperimentConfig.from_dict(raw)


def config_hash(config: ExperimentConfig) -> str:
    """Stable hash of the canonical config dict; stamped into every output."""
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
