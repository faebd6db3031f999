"""Experiment orchestration: from a config to persisted, comparable runs.

One run = prepare an instance (generate or load a graph, draw probabilities,
blockable flags and entry nodes, prune, condense), execute a defender
strategy, evaluate its best plan, and persist everything needed to re-verify
the numbers: the instance graph, the final population, the value-net
checkpoint, the simulation row, and a JSON record.

All artifacts except the timing sidecar are bit-reproducible for a given
config and seed: wall-clock measurements live in ``timings.json`` only.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .config import ExperimentConfig
from .defense import (
    ExactFitness,
    Member,
    NetFitness,
    Population,
    best_member,
    edo_run,
    exhaustive_run,
    greedy_run,
    save_population,
    vec_run,
)
from .graph import (
    AttackGraph,
    EmptyGameError,
    GraphValidationError,
    ProbabilityDistribution,
    assign_blockable,
    graph_to_text,
    load_graph,
    prune,
    sample_edge_probabilities,
    save_graph,
    select_entry_nodes,
)
from .generator import generate_synthetic
from .kernel import CondensedGraph, condense, kernel_report
from .mdp import StateSpaceLimitError
from .simulate import CSV_HEADER, DpPolicy, SimulationReport, csv_row, simulate
from .valuenet import (
    Adam,
    NetGreedyPolicy,
    TrainingConfig,
    ValueNet,
    save_checkpoint,
    train_round,
)

STRATEGIES = ("nndp-edo", "nndp-vec", "greedy", "exhaustive")

# independent random streams per purpose, derived from the instance seed
_S_GENERATE, _S_PROBS, _S_BLOCKABLE, _S_ENTRIES = 0, 1, 2, 3
_S_NET, _S_SEARCH, _S_TRAIN, _S_SIM = 4, 5, 6, 7


class PipelineError(Exception):
    """The requested run cannot be assembled from the given config."""


class ReportCompatibilityError(Exception):
    """Records under comparison come from incompatible experiment setups."""


def _child_seed(seed: int, stream: int, index: int = 0) -> int:
    ss = np.random.SeedSequence((seed, stream, index))
    return int(ss.generate_state(1, np.uint32)[0])


def _rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, stream, index)))


@dataclass(frozen=True)
class PreparedInstance:
    graph: AttackGraph
    cg: CondensedGraph
    dropped_entries: tuple[str, ...]
    instance_key: str


def build_source_graph(config: ExperimentConfig, seed: int) -> AttackGraph:
    """The playable graph before final pruning: probabilities, blockable
    flags and entry nodes all assigned.

    When the config names a graph file, that file is authoritative and must
    already carry entry nodes.
    """
    if config.graph_file:
        g = load_graph(config.graph_file)
        if not g.entry_nodes:
            raise PipelineError(
                f"graph file {config.graph_file} has no entry nodes; "
                "produce one with the generate command first"
            )
        return g
    raw = generate_synthetic(config.n_computers, seed=_child_seed(seed, _S_GENERATE))
    base = prune(raw)
    dist = ProbabilityDistribution.from_name(config.distribution)
    base = sample_edge_probabilities(base, dist, _child_seed(seed, _S_PROBS))
    base = assign_blockable(base, _child_seed(seed, _S_BLOCKABLE))
    entries = select_entry_nodes(
        base, config.entry_pool_size, config.entry_count, _child_seed(seed, _S_ENTRIES)
    )
    return base.with_entries(entries)


def _prune_dropping_dead_entries(g: AttackGraph) -> tuple[AttackGraph, tuple[str, ...]]:
    """Prune, discarding entries whose only routes run through other entries.

    Removing entry in-edges can strand an entry node; attacks from such an
    entry could only re-enter territory the attacker already owns, so
    dropping it does not change the game's value.
    """
    entries = set(g.entry_nodes)
    dropped: list[str] = []
    while True:
        try:
            return prune(g.with_entries(frozenset(entries))), tuple(sorted(dropped))
        except GraphValidationError as exc:
            dead = getattr(exc, "missing_entries", ())
            if not dead:
                raise
            warnings.warn(
                f"dropping entry nodes with no route of their own to DA: "
                f"{', '.join(dead)}",
                RuntimeWarning,
                stacklevel=2,
            )
            dropped.extend(dead)
            entries -= set(dead)
            if not entries:
                raise EmptyGameError(
                    "every selected entry depends on another entry's edges"
                ) from exc


def prepare_instance(config: ExperimentConfig, seed: int) -> PreparedInstance:
    g = build_source_graph(config, seed)
    pruned, dropped = _prune_dropping_dead_entries(g)
    cg = condense(pruned)
    key = hashlib.sha256(graph_to_text(pruned).encode("utf-8")).hexdigest()[:16]
    return PreparedInstance(pruned, cg, dropped, key)


@dataclass(frozen=True)
class RunRecord:
    strategy: str
    seed: int
    config: dict
    instance_key: str
    dropped_entries: tuple[str, ...]
    n_nsps: int
    n_bw_edges: int
    round_best_fitness: tuple[float, ...]
    loss_curves: tuple[tuple[float, ...], ...]
    training_flag: bool
    best_plan: tuple[int, ...]
    best_fitness: float
    exact_value: float | None
    simulation: dict | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        raw = json.loads(text)
        return cls(
            strategy=raw["strategy"],
            seed=raw["seed"],
            config=raw["config"],
            instance_key=raw["instance_key"],
            dropped_entries=tuple(raw["dropped_entries"]),
            n_nsps=raw["n_nsps"],
            n_bw_edges=raw["n_bw_edges"],
            round_best_fitness=tuple(raw["round_best_fitness"]),
            loss_curves=tuple(tuple(c) for c in raw["loss_curves"]),
            training_flag=raw["training_flag"],
            best_plan=tuple(raw["best_plan"]),
            best_fitness=raw["best_fitness"],
            exact_value=raw["exact_value"],
            simulation=raw["simulation"],
        )


def _config_snapshot(config: ExperimentConfig) -> dict:
    snap = asdict(config)
    snap["seeds"] = list(snap["seeds"])
    return snap


def _simulation_dict(report: SimulationReport, plan_id: str, evaluator: str) -> dict:
    return {
        "plan_id": plan_id,
        "evaluator": evaluator,
        "runs": report.runs,
        "successes": report.successes,
        "success_rate": report.success_rate,
        "std_error": report.std_error,
    }


def _exact_value_or_none(
    cg: CondensedGraph, plan: tuple[int, ...], memo_limit: int
) -> float | None:
    try:
        return ExactFitness(cg, memo_limit=memo_limit)(plan)
    except StateSpaceLimitError:
        return None


def run_dir_for(config: ExperimentConfig, strategy: str, seed: int) -> str:
    return os.path.join(config.out_dir, f"{strategy}-seed{seed}")


def _persist(
    config: ExperimentConfig,
    record: RunRecord,
    inst: PreparedInstance,
    pop: Population,
    report: SimulationReport | None,
    net: ValueNet | None,
    round_index: int,
    timings: dict,
) -> str:
    run_dir = run_dir_for(config, record.strategy, record.seed)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "record.json"), "w", encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")
    save_graph(inst.graph, os.path.join(run_dir, "graph.txt"))
    save_population(os.path.join(run_dir, "population.txt"), pop)
    csv_path = os.path.join(run_dir, "simulation.csv")
    if report is not None and record.simulation is not None:
        with open(csv_path, "w", encoding="ascii") as fh:
            fh.write(CSV_HEADER + "\n")
            fh.write(
                csv_row(
                    report,
                    record.simulation["plan_id"],
                    record.simulation["evaluator"],
                )
                + "\n"
            )
    elif os.path.exists(csv_path):
        os.remove(csv_path)
    if net is not None:
        save_checkpoint(os.path.join(run_dir, "net.ckpt"), net, round_index)
    with open(os.path.join(run_dir, "timings.json"), "w", encoding="utf-8") as fh:
        json.dump(timings, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return run_dir


def run_nndp_edo(
    config: ExperimentConfig,
    seed: int,
    survivor: str = "diversity",
    simulate_best: bool = True,
) -> RunRecord:
    """Alternate diversity search and net training, then score the winner.

    Each round runs a fresh evolutionary search with the current net as the
    fitness function, then trains the net on rollouts from the resulting
    population; one extra training round follows the last search.  The best
    final plan is re-scored by Monte Carlo under the net's greedy policy,
    and exactly when the state space allows it.
    """
    config.validate()
    started = time.perf_counter()
    strategy = "nndp-edo" if survivor == "diversity" else "nndp-vec"
    search = edo_run if survivor == "diversity" else vec_run
    inst = prepare_instance(config, seed)
    cg = inst.cg
    net = ValueNet(
        cg.n_nsps, depth=config.depth, width=config.width,
        seed=_child_seed(seed, _S_NET),
    )
    optimizer = Adam(net, learning_rate=config.learning_rate)
    tconf = TrainingConfig(
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        epochs_per_round=config.epochs_per_round,
        explore_prob=config.explore_prob,
    )
    evaluator = NetFitness(net, cg)
    round_best: list[float] = []
    curves: list[tuple[float, ...]] = []
    diverged = False
    search_s = train_s = 0.0
    if config.rounds == 0:
        pop = search(
            cg, evaluator, config.budget, config.mu, 0, rng=_rng(seed, _S_SEARCH, 0)
        )
    else:
        for r in range(config.rounds):
            t = time.perf_counter()
            pop = search(
                cg, evaluator, config.budget, config.mu, config.iterations,
                rng=_rng(seed, _S_SEARCH, r),
            )
            search_s += time.perf_counter() - t
            round_best.append(best_member(pop).fitness)
            t = time.perf_counter()
            stats = train_round(
                net, cg, [m.bits for m in pop], tconf,
                rng=_rng(seed, _S_TRAIN, r), optimizer=optimizer,
            )
            train_s += time.perf_counter() - t
            curves.append(stats.epoch_losses)
            diverged = diverged or stats.diverged
        stats = train_round(
            net, cg, [m.bits for m in pop], tconf,
            rng=_rng(seed, _S_TRAIN, config.rounds), optimizer=optimizer,
        )
        curves.append(stats.epoch_losses)
        diverged = diverged or stats.diverged
    plateaued = bool(
        curves and curves[-1] and float(np.mean(curves[-1])) > 0.1
    )
    # the final training round sharpened the net after the last search, so
    # re-score the surviving plans before picking the winner
    best_fitness, _, best = min(
        (evaluator(m.bits), m.born, m) for m in pop
    )
    report = None
    sim_dict = None
    if simulate_best:
        report = simulate(
            cg, best.bits, NetGreedyPolicy(net, cg), config.mc_runs,
            seed=_child_seed(seed, _S_SIM),
        )
        sim_dict = _simulation_dict(report, _plan_id(best.bits), "net-greedy")
    record = RunRecord(
        strategy=strategy,
        seed=seed,
        config=_config_snapshot(config),
        instance_key=inst.instance_key,
        dropped_entries=inst.dropped_entries,
        n_nsps=cg.n_nsps,
        n_bw_edges=len(cg.bw_edges),
        round_best_fitness=tuple(round_best),
        loss_curves=tuple(curves),
        training_flag=diverged or plateaued,
        best_plan=best.bits,
        best_fitness=best_fitness,
        exact_value=_exact_value_or_none(cg, best.bits, config.memo_limit),
        simulation=sim_dict,
    )
    timings = {
        "total_s": time.perf_counter() - started,
        "search_s": search_s,
        "train_s": train_s,
    }
    _persist(config, record, inst, pop, report, net, config.rounds, timings)
    return record


def run_baseline(config: ExperimentConfig, strategy: str, seed: int) -> RunRecord:
    """Drive one of the baseline defenders with shared instance wiring.

    The value-based evolutionary baseline reuses the alternating training
    loop with worst-fitness survivor selection.  Greedy and exhaustive are
    exact-evaluator searches, so they need a solvable state space.
    """
    config.validate()
    if strategy in ("vec", "nndp-vec"):
        return run_nndp_edo(config, seed, survivor="worst")
    if strategy not in ("greedy", "exhaustive"):
        raise PipelineError(f"unknown strategy {strategy!r}")
    started = time.perf_counter()
    inst = prepare_instance(config, seed)
    cg = inst.cg
    ev = ExactFitness(cg, memo_limit=config.memo_limit)
    if strategy == "greedy":
        plan = greedy_run(cg, ev, config.budget)
    else:
        plan = exhaustive_run(
            cg, ev, config.budget, enumeration_budget=config.enumeration_budget
        )
    fitness = ev(plan)
    report = simulate(
        cg, plan, DpPolicy(cg, memo_limit=config.memo_limit), config.mc_runs,
        seed=_child_seed(seed, _S_SIM),
    )
    record = RunRecord(
        strategy=strategy,
        seed=seed,
        config=_config_snapshot(config),
        instance_key=inst.instance_key,
        dropped_entries=inst.dropped_entries,
        n_nsps=cg.n_nsps,
        n_bw_edges=len(cg.bw_edges),
        round_best_fitness=(),
        loss_curves=(),
        training_flag=False,
        best_plan=plan,
        best_fitness=fitness,
        exact_value=fitness,
        simulation=_simulation_dict(report, _plan_id(plan), "exact-dp"),
    )
    timings = {"total_s": time.perf_counter() - started}
    _persist(
        config, record, inst, [Member(plan, fitness, 0)], report, None, 0, timings
    )
    return record


def _plan_id(bits: tuple[int, ...]) -> str:
    return "plan-" + "".join(str(b) for b in bits)


def write_kernel_artifacts(config: ExperimentConfig, seed: int, out_dir: str) -> dict:
    """Prune and condense an instance, persisting the pruned graph and a
    human-readable kernel summary; returns the headline counts."""
    inst = prepare_instance(config, seed)
    os.makedirs(out_dir, exist_ok=True)
    save_graph(inst.graph, os.path.join(out_dir, "pruned.txt"))
    with open(os.path.join(out_dir, "kernel.txt"), "w", encoding="utf-8") as fh:
        fh.write(kernel_report(inst.cg))
    return {
        "instance_key": inst.instance_key,
        "nodes": len(inst.graph.nodes),
        "edges": len(inst.graph.edges),
        "nsps": inst.cg.n_nsps,
        "bw_edges": len(inst.cg.bw_edges),
        "dropped_entries": list(inst.dropped_entries),
    }


def _load_record(run_dir: str) -> RunRecord:
    path = os.path.join(run_dir, "record.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return RunRecord.from_json(fh.read())
    except OSError as exc:
        raise PipelineError(f"cannot read run record {path}: {exc}") from exc
    except (KeyError, json.JSONDecodeError) as exc:
        raise PipelineError(f"malformed run record {path}: {exc}") from exc


def _wall_time(run_dir: str) -> float | None:
    try:
        with open(os.path.join(run_dir, "timings.json"), "r", encoding="utf-8") as fh:
            return float(json.load(fh)["total_s"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError):
        return None


_COMPAT_KEYS = ("graph_file", "n_computers", "budget", "mc_runs")


def report(run_dirs: list[str]) -> str:
    """Comparison table across runs: strategy and distribution versus rate.

    Seeds average within each (strategy, distribution) cell, mirroring how
    multi-seed results are usually tabulated.  Records must come from the
    same experiment family; mixing graph sources or budgets is refused.
    """
    if not run_dirs:
        raise PipelineError("no run directories given")
    records = [(d, _load_record(d)) for d in run_dirs]
    base = records[0][1].config
    for d, rec in records:
        for key in _COMPAT_KEYS:
            if rec.config.get(key) != base.get(key):
                raise ReportCompatibilityError(
                    f"run {d} disagrees on {key}: "
                    f"{rec.config.get(key)!r} vs {base.get(key)!r}"
                )
    cells: dict[tuple[str, str], list[tuple[int, RunRecord, float | None]]] = {}
    for d, rec in records:
        key = (rec.strategy, rec.config.get("distribution", "?"))
        cells.setdefault(key, []).append((rec.seed, rec, _wall_time(d)))
    all_seeds = sorted({rec.seed for _, rec in records})
    head = ["strategy", "distribution", "seeds", "mean_success_rate", "mean_wall_s"]
    head += [f"seed{ix}_rate" for ix in all_seeds]
    lines = [",".join(head)]
    for (strategy, distribution) in sorted(cells):
        rows = sorted(cells[(strategy, distribution)])
        rates = {}
        for ix, rec, _ in rows:
            if rec.simulation is not None:
                rates[ix] = rec.simulation["success_rate"]
        mean_rate = (
            f"{np.mean(list(rates.values())):.6f}" if rates else ""
        )
        walls = [w for _, _, w in rows if w is not None]
        mean_wall = f"{np.mean(walls):.3f}" if walls else ""
        row = [strategy, distribution, str(len(rows)), mean_rate, mean_wall]
        for ix in all_seeds:
            row.append(f"{rates[ix]:.6f}" if ix in rates else "")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
