"""Experiment orchestration: matrix expansion, cell execution, summary tables.

A run writes one JSON-lines log per (rule, attack, seed) cell under
``logs/``; the first line is a provenance header (config hash, cell, seed),
each following line is one RoundRecord. Summaries (AUC table, overhead
table, per-attack curves) are pure functions of the logs: delete the tables,
re-run ``summarize``, and you get the same bytes back.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .aggregators import make_aggregator
from .config import ConfigError, ExperimentConfig, config_hash
from .data import dirichlet_partition, generate_dataset
from .models import ModelSpec
from .rng import derive_seed, make_rng
from .sim import FederatedRun

__all__ = [
    "RunCell",
    "ResultStore",
    "expand_matrix",
    "run_cell",
    "run_matrix",
    "emit_auc_table",
    "emit_overhead_table",
    "emit_curves",
    "summarize",
]

log = logging.getLogger("fedspectral")


@dataclass(frozen=True)
class RunCell:
    rule: str
    attack: str
    seed: int

    @property
    def log_name(self) -> str:
        return f"{self.rule}__{self.attack}__s{self.seed}.jsonl"


def expand_matrix(config: ExperimentConfig) -> list[RunCell]:
    """Full rules x attacks x seeds product, in config order."""
    if not config.rules or not config.attacks or not config.seeds:
        raise ConfigError("rules, attacks, and seeds must all be nonempty")
    return [
        RunCell(rule, attack, seed)
        for rule in config.rules
        for attack in config.attacks
        for seed in config.seeds
    ]


def _build_run(cell: RunCell, config: ExperimentConfig) -> FederatedRun:
    spec = ModelSpec(
        kind=config.model_kind,
        num_features=config.num_features,
        num_classes=config.num_classes,
        hidden=config.hidden,
    )
    train, test = generate_dataset(
        config.num_classes,
        config.num_features,
        config.train_size,
        config.test_size,
        config.noise,
        derive_seed(cell.seed, "dataset"),
    )
    part_rng = make_rng(derive_seed(cell.seed, "partition"))
    partition = dirichlet_partition(
        train.labels, config.num_clients, config.dirichlet_alpha, part_rng
    )
    aggregator = make_aggregator(
        cell.rule, config.make_rule_config(), config.make_spectral_config()
    )
    scenario = config.make_scenario(cell.attack)
    return FederatedRun(
        spec=spec,
        train=train,
        test=test,
        partition=partition,
        aggregator=aggregator,
        scenario=scenario,
        master_seed=cell.seed,
        clients_per_round=config.clients_per_round,
        attacker_count=config.attacker_count,
        local_epochs=config.local_epochs,
        lr=config.lr,
        weight_decay=config.weight_decay,
        batch_size=config.batch_size,
    )


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def run_cell(cell: RunCell, config: ExperimentConfig, out_dir) -> Path:
    """Execute T rounds with a fresh defense state; write the cell's JSONL log."""
    run = _build_run(cell, config)
    run.aggregator.reset()
    records = run.run(config.rounds)

    logs_dir = Path(out_dir) / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    path = logs_dir / cell.log_name
    header = {
        "config_hash": config_hash(config),
        "master_seed": cell.seed,
        "rule": cell.rule,
        "attack": cell.attack,
        "version": __version__,
    }
    lines = [_dump_line(header)]
    lines += [_dump_line(r.to_json_dict()) for r in records]
    path.write_text("\n".join(lines) + "\n")
    return path


TIMING_FIELDS = ("wall_time_ns", "subspace_build_ns")


def log_fingerprint(path) -> str:
    """Cell log with measured wall-clock fields zeroed, for determinism checks.

    Every semantic byte of a round log is reproducible from the master seed;
    the two timing fields are physical measurements and cannot be. Reruns must
    therefore agree exactly on this fingerprint, and may differ only in timing.
    """
    lines = []
    for line in Path(path).read_text().splitlines():
        obj = json.loads(line)
        if "wall_time_ns" in obj:
            obj["wall_time_ns"] = 0
        if isinstance(obj.get("diagnostics"), dict):
            for f in TIMING_FIELDS:
                if f in obj["diagnostics"]:
                    obj["diagnostics"][f] = 0
        lines.append(_dump_line(obj))
    return "\n".join(lines) + "\n"


def _parse_filter(filter_expr: str | None) -> dict[str, str]:
    out: dict[str, str] = {}
    if not filter_expr:
        return out
    for part in filter_expr.split(","):
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"bad filter clause {part!r}, expected key=value")
        key, value = part.split("=", 1)
        if key not in ("rule", "attack", "seed"):
            raise ConfigError(f"filter key must be rule/attack/seed, got {key!r}")
        out[key] = value
    return out


def _cell_matches(cell: RunCell, flt: dict[str, str]) -> bool:
    if "rule" in flt and cell.rule != flt["rule"]:
        return False
    if "attack" in flt and cell.attack != flt["attack"]:
        return False
    if "seed" in flt and str(cell.seed) != flt["seed"]:
        return False
    return True


def _run_cell_task(args) -> str:
    cell, config_dict, out_dir = args
    config = ExperimentConfig.from_dict(config_dict)
    return str(run_cell(cell, config, out_dir))


def run_matrix(
    config: ExperimentConfig,
    out_dir,
    jobs: int = 1,
    filter_expr: str | None = None,
) -> list[Path]:
    """Run (a filtered subset of) the full matrix; write manifest and logs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [c for c in expand_matrix(config) if _cell_matches(c, _parse_filter(filter_expr))]
    if not cells:
        raise ConfigError("filter matched no cells")

    manifest = {
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "version": __version__,
        "cells": [f"{c.rule}/{c.attack}/{c.seed}" for c in cells],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    if jobs > 1:
        tasks = [(c, config.to_dict(), str(out)) for c in cells]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            paths = [Path(p) for p in pool.map(_run_cell_task, tasks)]
    else:
        paths = [run_cell(c, config, out) for c in cells]

    _smoke_check(ResultStore(out), config)
    return paths


def _smoke_check(store: "ResultStore", config: ExperimentConfig) -> None:
    """Flag rules whose no-attack final accuracy strays from the mean rule's.

    A warning, not an assertion: wide bands are expected for selection-heavy
    rules under strong non-IID skew.
    """
    if "none" not in config.attacks or "mean" not in config.rules:
        return
    finals: dict[str, list[float]] = {}
    for header, records in store.iter_cells():
        if header["attack"] != "none" or not records:
            continue
        finals.setdefault(header["rule"], []).append(records[-1]["accuracy"])
    if "mean" not in finals:
        return
    reference = float(np.mean(finals["mean"]))
    for rule, vals in sorted(finals.items()):
        gap = abs(float(np.mean(vals)) - reference)
        if gap > config.smoke_band:
            log.warning(
                "smoke check: rule %s no-attack final accuracy %.3f deviates %.3f "
                "from mean rule (band %.3f)",
                rule,
                float(np.mean(vals)),
                gap,
                config.smoke_band,
            )


class ResultStore:
    """Read-side view over an output directory's logs and manifest."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.logs_dir = self.root / "logs"

    def manifest(self) -> dict:
        return json.loads((self.root / "manifest.json").read_text())

    def iter_cells(self):
        """Yield (header, records) per cell log, sorted by file name."""
        for path in sorted(self.logs_dir.glob("*.jsonl")):
            lines = path.read_text().splitlines()
            header = json.loads(lines[0])
            records = [json.loads(line) for line in lines[1:]]
            yield header, records

    def provenance_line(self) -> str:
        man = self.manifest()
        seeds = ",".join(str(s) for s in man["config"]["seeds"])
        return f"# config_hash={man['config_hash']} seeds={seeds} version={man['version']}"


def _auc_by_cell(store: ResultStore) -> dict[tuple[str, str], list[float]]:
    """Per (rule, attack): list of per-seed AUCs (mean accuracy across rounds)."""
    cells: dict[tuple[str, str], list[float]] = {}
    for header, records in store.iter_cells():
        if not records:
            continue
        auc = float(np.mean([r["accuracy"] for r in records]))
        cells.setdefault((header["rule"], header["attack"]), []).append(auc)
    return cells


def emit_auc_table(store: ResultStore) -> str:
    """Rules x attacks table of AUC percentages with grand-mean row and column.

    Cells average per-seed AUCs; the Grand Total column is the row mean over
    attacks, the grand-mean row holds column means over rules. Rows and
    columns are sorted by name so regeneration is byte-stable.
    """
    cells = _auc_by_cell(store)
    rules = sorted({k[0] for k in cells})
    attacks = sorted({k[1] for k in cells})
    if not rules:
        raise ValueError("no round logs found")

    def fmt(x: float) -> str:
        return f"{100.0 * x:.4f}"

    lines = [store.provenance_line(), ",".join(["rule"] + attacks + ["grand_total"])]
    body = np.full((len(rules), len(attacks)), np.nan)
    for i, rule in enumerate(rules):
        for j, attack in enumerate(attacks):
            seeds = cells.get((rule, attack))
            if seeds:
                body[i, j] = float(np.mean(seeds))
        row = [fmt(v) if np.isfinite(v) else "" for v in body[i]]
        finite = body[i][np.isfinite(body[i])]
        total = fmt(float(finite.mean())) if finite.size else ""
        lines.append(",".join([rules[i]] + row + [total]))

    col_means = []
    for j in range(len(attacks)):
        col = body[:, j][np.isfinite(body[:, j])]
        col_means.append(fmt(float(col.mean())) if col.size else "")
    overall = body[np.isfinite(body)]
    grand = fmt(float(overall.mean())) if overall.size else ""
    lines.append(",".join(["grand_mean"] + col_means + [grand]))
    return "\n".join(lines) + "\n"


def emit_overhead_table(store: ResultStore) -> str:
    """Per-rule mean aggregation time in milliseconds, sorted ascending."""
    times: dict[str, list[int]] = {}
    for header, records in store.iter_cells():
        for r in records:
            times.setdefault(header["rule"], []).append(r["wall_time_ns"])
    rows = sorted(
        ((float(np.mean(v)) / 1e6, rule) for rule, v in times.items()),
        key=lambda t: (t[0], t[1]),
    )
    lines = [store.provenance_line(), "rule,mean_time_ms"]
    lines += [f"{rule},{ms:.6f}" for ms, rule in rows]
    return "\n".join(lines) + "\n"


def emit_curves(store: ResultStore, attack: str) -> str:
    """Long-format per-round accuracy rows (round, rule, seed, accuracy)."""
    lines = [store.provenance_line(), "round,rule,seed,accuracy"]
    rows = []
    for header, records in store.iter_cells():
        if header["attack"] != attack:
            continue
        for r in records:
            rows.append((r["round"], header["rule"], header["master_seed"], r["accuracy"]))
    rows.sort(key=lambda t: (t[1], t[2], t[0]))
    lines += [f"{t[0]},{t[1]},{t[2]},{t[3]:.6f}" for t in rows]
    return "\n".join(lines) + "\n"


def summarize(out_dir) -> list[Path]:
    """Regenerate all tables and curves from the logs alone."""
    store = ResultStore(out_dir)
    root = Path(out_dir)
    tables = root / "tables"
    curves = root / "curves"
    tables.mkdir(exist_ok=True)
    curves.mkdir(exist_ok=True)

    written = []
    auc_path = tables / "auc_table.csv"
    auc_path.write_text(emit_auc_table(store))
    written.append(auc_path)
    overhead_path = tables / "overhead_table.csv"
    overhead_path.write_text(emit_overhead_table(store))
    written.append(overhead_path)

    attacks = sorted({h["attack"] for h, _ in store.iter_cells()})
    for attack in attacks:
        path = curves / f"curve_{attack}.csv"
        path.write_text(emit_curves(store, attack))
        written.append(path)
    return written
