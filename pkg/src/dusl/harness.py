"""Config-driven experiments: seeded multi-run execution, CSV output, policy statistics.

Every run ``i`` of an experiment derives its streams from
``SeedSequence([master_seed, seeds[i]])``, so a config file fully determines
all output.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .baselines import run_mab, run_random
from .core import ActiveSets, InstanceDims
from .exceptions import ConfigurationError
from .metrics import (
    RewardTrace,
    final_value,
    moving_average,
    recovery_epochs,
    segment_bounds,
)
from .policy import HIDDEN_SIZES, PolicyBank, save_snapshot
from .scenario import DynamicsSpec, ScenarioSpec
from .trainer import TrainConfig, adapt_online, evaluate_deterministic, train

OUTPUT_ENV = "DUSL_OUTPUT_DIR"
CSV_HEADER = ("epoch", "xi", "moving_avg", "explore_std", "change_marker")
AGGREGATE_HEADER = CSV_HEADER + ("mean_moving_avg", "stderr")

METHODS = (
    "dusl",
    "dusl-online-full",
    "dusl-online-partial",
    "dusl-scratch",
    "dusl-frozen",
    "mab",
    "random",
)
_ONLINE_MODE = {
    "dusl-online-full": "online-full",
    "dusl-online-partial": "online-partial",
    "dusl-scratch": "online-scratch",
    "dusl-frozen": "frozen",
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScenarioSection(_Strict):
    family: Literal["conditional", "general", "explicit"] = "conditional"
    active_sizes: list[int] = Field(default_factory=list)
    n_roots: int = 4
    uniform_cpt: bool = False
    change_epochs: list[int] = Field(default_factory=list)
    n_changes: int = 0  # evenly spaced changes, used when change_epochs is empty
    persistence_max: int = Field(0, ge=0)
    support: list[list[list[int]]] = Field(default_factory=list)  # 1-based node ids
    probabilities: list[float] = Field(default_factory=list)


class TrainingSection(_Strict):
    n_epochs: int = Field(20000, ge=1)
    exploration_decay: float = Field(1.0, ge=0)
    decay_timescale: float | None = None
    learning_rate: float = Field(1e-3, gt=0)
    window: int = Field(100, ge=1)
    pretrain_epochs: int = Field(0, ge=0)  # offline phase before an online method
    reset_optimizer: bool = False
    hidden_sizes: list[int] = Field(default_factory=lambda: list(HIDDEN_SIZES))
    dtype: Literal["float32", "float64"] = "float32"
    eval_steps: int = Field(0, ge=0)
    final_window: int = Field(1000, ge=1)


class StatsSection(_Strict):
    n_trials: int = Field(0, ge=0)


class OracleSection(_Strict):
    fig1: bool = True
    vertex_instances: int = Field(20, ge=0)
    vertex_mixtures: int = Field(1000, ge=1)
    vertex_max_bits: int = Field(12, ge=1, le=20)
    degradation_strategies: int = Field(5, ge=0)
    degradation_nodes: int = Field(3, ge=1)
    degradation_messages: int = Field(2, ge=1)
    degradation_eta: float = Field(0.3, gt=0, le=1)
    degradation_alpha: float = Field(1.0, gt=0)
    degradation_pairs: int = Field(10_000, ge=1)


class ExperimentConfig(_Strict):
    name: str = "experiment"
    n_nodes: int = Field(ge=1)
    n_messages: int = Field(1, ge=1)
    n_opportunities: int = Field(ge=1)
    scenario: ScenarioSection = Field(default_factory=ScenarioSection)
    method: Literal[METHODS] = "dusl"  # type: ignore[valid-type]
    training: TrainingSection = Field(default_factory=TrainingSection)
    stats: StatsSection = Field(default_factory=StatsSection)
    oracle: OracleSection = Field(default_factory=OracleSection)
    master_seed: int = 0
    seeds: list[int] = Field(default_factory=lambda: [0])
    output_dir: str = "runs"
    save_policies: Literal["none", "first", "all"] = "first"
    n_jobs: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _consistent(self):
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        ids = [n for a in self.scenario.support for nodes in a for n in nodes]
        if ids and not all(1 <= n <= self.n_nodes for n in ids):
            raise ValueError(f"support node ids must lie in 1..{self.n_nodes}")
        try:
            self.scenario_spec(0)
        except (ConfigurationError, ValueError) as exc:
            raise ValueError(str(exc)) from exc
        return self

    @property
    def dims(self) -> InstanceDims:
        return InstanceDims(self.n_nodes, self.n_messages, self.n_opportunities)

    def dynamics(self) -> DynamicsSpec:
        sc = self.scenario
        if sc.change_epochs:
            return DynamicsSpec(tuple(sc.change_epochs), sc.persistence_max)
        if sc.n_changes:
            return DynamicsSpec.evenly_spaced(sc.n_changes, self.training.n_epochs, sc.persistence_max)
        return DynamicsSpec((), sc.persistence_max)

    def scenario_spec(self, seed: int) -> ScenarioSpec:
        sc = self.scenario
        dynamics = self.dynamics()
        dynamics.validate(self.training.n_epochs)
        return ScenarioSpec(
            dims=self.dims,
            family=sc.family,
            active_sizes=tuple(sc.active_sizes),
            seed=int(seed),
            dynamics=dynamics,
            uniform_cpt=sc.uniform_cpt,
            n_roots=sc.n_roots,
            support=tuple(ActiveSets.of(*[[n - 1 for n in nodes] for nodes in a]) for a in sc.support),
            probabilities=tuple(sc.probabilities),
        )

    def train_config(self, mode: str = "offline", n_epochs: int | None = None) -> TrainConfig:
        t = self.training
        return TrainConfig(
            n_epochs=t.n_epochs if n_epochs is None else n_epochs,
            exploration_decay=t.exploration_decay,
            decay_timescale=t.decay_timescale,
            learning_rate=t.learning_rate,
            mode=mode,
            window=t.window,
            reset_optimizer=t.reset_optimizer,
        )

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir) / self.name


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment config."""
    text = Path(path).read_text()
    return parse_config(yaml.safe_load(text) or {}, source=str(path))


def parse_config(data: dict, source: str = "<config>") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        lines = [f"invalid experiment config {source}:"]
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"  {loc}: {err['msg']}")
        raise ConfigurationError("\n".join(lines)) from None


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


# -- runs ------------------------------------------------------------------


@dataclass
class RunResult:
    seed: int
    trace: RewardTrace
    moving_avg: np.ndarray
    summary: dict
    bank: PolicyBank | None = None
    scenario: ScenarioSpec | None = None


def run_streams(master_seed: int, seed: int):
    """``(scenario seed, policy-init stream, training stream)`` of one run."""
    ss = np.random.SeedSequence([int(master_seed), int(seed)])
    scen, init, play = ss.spawn(3)
    return int(scen.generate_state(1)[0]), init, play


def run_single(config: ExperimentConfig, seed: int) -> RunResult:
    scen_seed, init_ss, play_ss = run_streams(config.master_seed, seed)
    scenario = config.scenario_spec(scen_seed)
    rng = np.random.default_rng(play_ss)
    t = config.training
    method = config.method
    bank = None
    if method == "mab":
        _, trace = run_mab(scenario, t.n_epochs, rng)
    elif method == "random":
        trace = run_random(scenario, t.n_epochs, rng)
    else:
        bank = PolicyBank(scenario.dims, init_ss, tuple(t.hidden_sizes), np.dtype(t.dtype))
        if method == "dusl":
            _, trace = train(config.train_config(), scenario, bank, rng)
        else:
            if t.pretrain_epochs and method != "dusl-scratch":
                _pretrain(config, seed, scenario, bank, rng)
            # same initial pattern as the offline phase, fresh active-set draws
            env = scenario.environment(stream=1)
            _, trace = adapt_online(config.train_config(_ONLINE_MODE[method]), scenario, bank, rng, env=env)
    ma = moving_average(trace.xi, t.window)
    summary = summarize(trace, ma, config)
    summary["seed"] = int(seed)
    summary["scenario_seed"] = scen_seed
    if bank is not None and t.eval_steps:
        summary["deterministic_success"] = evaluate_deterministic(bank, scenario, t.eval_steps, seed=0)
    if bank is not None and config.stats.n_trials:
        summary["policy_statistics"] = policy_statistics(bank, scenario, config.stats.n_trials, seed=0)
    return RunResult(int(seed), trace, ma, summary, bank, scenario)


_PRETRAINED: dict = {}


def _pretrain(config: ExperimentConfig, seed: int, scenario: ScenarioSpec, bank: PolicyBank, rng) -> None:
    """Offline phase of an online method on the static version of the scenario.

    The result only depends on the config minus its method, so the last
    pretrained bank (and the generator state after it) is reused when
    several online methods run the same seed back to back.
    """
    key = (config.model_copy(update={"method": "dusl", "seeds": [0], "output_dir": ""}).model_dump_json(), seed)
    hit = _PRETRAINED.get(key)
    if hit is None:
        static = scenario.with_dynamics(DynamicsSpec())
        train(config.train_config(n_epochs=config.training.pretrain_epochs), static, bank, rng)
        _PRETRAINED.clear()
        _PRETRAINED[key] = (bank.copy(), copy.deepcopy(rng.bit_generator.state))
        return
    cached, state = hit
    bank.theta[:] = cached.theta
    bank.m[:] = cached.m
    bank.v[:] = cached.v
    bank.steps[:] = cached.steps
    rng.bit_generator.state = copy.deepcopy(state)


def summarize(trace: RewardTrace, ma: np.ndarray, config: ExperimentConfig) -> dict:
    changes = trace.change_epochs()
    segments = segment_bounds(len(trace), changes)
    return {
        "n_epochs": len(trace),
        "mean_xi": float(trace.xi.mean()) if len(trace) else None,
        "final_moving_avg": float(ma[-1]) if len(ma) else None,
        "final_value": final_value(trace.xi, config.training.final_window),
        "change_epochs": changes,
        "segment_end_moving_avg": [float(ma[b - 1]) for _, b in segments],
        "recovery_epochs": recovery_epochs(ma, changes),
    }


def run_experiment(config: ExperimentConfig, output_dir=None, write: bool = True) -> list[RunResult]:
    """Run every seed, then write per-seed CSVs, the aggregate CSV and a summary."""
    if config.n_jobs > 1 and len(config.seeds) > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=config.n_jobs)(delayed(run_single)(config, s) for s in config.seeds)
    else:
        results = [run_single(config, s) for s in config.seeds]
    if write:
        write_outputs(config, results, output_dir)
    return results


def write_outputs(config: ExperimentConfig, results: list[RunResult], output_dir=None) -> Path:
    out = Path(output_dir) if output_dir is not None else config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        (out / f"seed_{r.seed}.csv").write_text(run_csv(r))
    (out / "aggregate.csv").write_text(aggregate_csv(results))
    summary = {
        "name": config.name,
        "method": config.method,
        "runs": [r.summary for r in results],
        "mean_final_value": float(np.mean([r.summary["final_value"] for r in results])),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config.yaml").write_text(dump_config(config))
    if config.save_policies != "none":
        chosen = results if config.save_policies == "all" else results[:1]
        for r in chosen:
            if r.bank is not None:
                save_snapshot(
                    out / f"policy_seed_{r.seed}.npz", r.bank,
                    seed=r.seed, scenario_seed=r.summary["scenario_seed"], epoch=len(r.trace),
                    include_optimizer=False,
                )
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def run_csv(r: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    tr = r.trace
    for t in range(len(tr)):
        w.writerow((t, int(tr.xi[t]), _fmt(r.moving_avg[t]), _fmt(tr.explore_std[t]), int(tr.change_marker[t])))
    return buf.getvalue()


def aggregate_curves(results: list[RunResult]) -> dict[str, np.ndarray]:
    """Across-seed curves; ``mean_moving_avg`` is the plain mean of the per-seed moving averages."""
    ma = np.stack([r.moving_avg for r in results])
    xi = np.stack([r.trace.xi.astype(float) for r in results])
    n = len(results)
    stderr = ma.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(ma.shape[1])
    return {
        "xi": xi.mean(axis=0),
        "moving_avg": ma.mean(axis=0),
        "explore_std": np.stack([r.trace.explore_std for r in results]).mean(axis=0),
        "change_marker": np.stack([r.trace.change_marker for r in results]).any(axis=0),
        "mean_moving_avg": ma.mean(axis=0),
        "stderr": stderr,
    }


def aggregate_csv(results: list[RunResult]) -> str:
    c = aggregate_curves(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_HEADER)
    for t in range(len(c["xi"])):
        w.writerow((
            t, _fmt(c["xi"][t]), _fmt(c["moving_avg"][t]), _fmt(c["explore_std"][t]),
            int(c["change_marker"][t]), _fmt(c["mean_moving_avg"][t]), _fmt(c["stderr"][t]),
        ))
    return buf.getvalue()


# -- policy statistics -----------------------------------------------------


def nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the smallest value with at least ``q`` percent at or below it."""
    return float(np.percentile(np.asarray(values), q, method="inverted_cdf"))


def policy_statistics(bank_or_table, scenario: ScenarioSpec, n_trials: int, seed=None) -> dict:
    """Transmission counts of the rounded policies over ``n_trials`` active-set draws.

    Per message: the distribution of total copies sent. Per opportunity:
    mean use count and 25th/75th nearest-rank percentiles.
    """
    if isinstance(bank_or_table, PolicyBank):
        table = bank_or_table.deterministic_table()
    else:
        table = np.asarray(bank_or_table, dtype=np.uint8)
    dims = scenario.dims
    L, N, M = dims.move_shape
    if n_trials == 0:
        return {"n_trials": 0, "per_message": [], "per_opportunity": []}
    env = scenario.environment(stream=0 if seed is None else 1 + int(seed))
    per_message = np.zeros((n_trials, L), dtype=np.int64)
    per_opportunity = np.zeros((n_trials, M), dtype=np.int64)
    for t in range(n_trials):
        active = env.step(t)
        x = table * active.mask(N)[:, :, None]
        per_message[t] = x.sum(axis=(1, 2))
        per_opportunity[t] = x.sum(axis=(0, 1))
    return {
        "n_trials": n_trials,
        "per_message": [
            {
                "message": l + 1,
                "mean": float(per_message[:, l].mean()),
                "distribution": {
                    int(k): int(c) for k, c in zip(*np.unique(per_message[:, l], return_counts=True))
                },
            }
            for l in range(L)
        ],
        "per_opportunity": [
            {
                "opportunity": m + 1,
                "mean": float(per_opportunity[:, m].mean()),
                "p25": nearest_rank(per_opportunity[:, m], 25),
                "p75": nearest_rank(per_opportunity[:, m], 75),
            }
            for m in range(M)
        ],
    }


# -- replay ----------------------------------------------------------------


def replay(config: ExperimentConfig, reference_dir=None, scratch_dir=None) -> list[str]:
    """Rerun ``config`` and list the CSV files that differ from ``reference_dir``."""
    import tempfile

    ref = Path(reference_dir) if reference_dir is not None else config.resolved_output_dir()
    if not ref.exists():
        raise ConfigurationError(f"no previous output at {ref}")
    with tempfile.TemporaryDirectory(dir=scratch_dir) as tmp:
        fresh = Path(tmp)
        results = run_experiment(config, write=False)
        for r in results:
            (fresh / f"seed_{r.seed}.csv").write_text(run_csv(r))
        (fresh / "aggregate.csv").write_text(aggregate_csv(results))
        mismatched = []
        for f in sorted(fresh.glob("*.csv")):
            old = ref / f.name
            if not old.exists() or old.read_bytes() != f.read_bytes():
                mismatched.append(f.name)
    return mismatched
