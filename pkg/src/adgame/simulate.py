"""Monte Carlo evaluation of blocking plans against a simulated attacker.

Runs the attack many times and reports the empirical success rate.  Each run
consumes a private stretch of a counter-based random stream: run ``r`` reads
uniforms from tape offset ``r * draws_per_run``, so splitting the runs across
chunks or workers reproduces the single-stream result bit-exactly.

``simulate`` plays the condensed game, drawing one uniform per attempted
path from its outcome distribution.  ``simulate_on_original`` walks the raw
graph edges one uniform per traversal, with blocked edges forced to fail.
Agreement between the two (and with the exact value) is the empirical check
that condensation preserved the game.

Runs in the same state are advanced in lockstep so the per-step work is a
handful of numpy array operations rather than a Python loop over runs.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from math import sqrt
from typing import Callable, Sequence

import numpy as np

from .kernel import CondensedGraph
from .mdp import (
    FAILED,
    State,
    SUCCESS,
    UNATTEMPTED,
    ExactSolver,
    initial_state,
    terminal_value,
    transition,
)

# Policies must be deterministic functions of the state: runs in the same
# state advance in lockstep, so one action is applied to the whole group.
Policy = Callable[[State], int]

CSV_HEADER = "plan_id,evaluator,runs,success_rate,std_error,wall_time_s"


class PolicyContractError(Exception):
    """The policy returned a path that is not admissible in the state."""


@dataclass(frozen=True)
class SimulationReport:
    runs: int
    successes: int
    success_rate: float
    std_error: float
    wall_time: float


def csv_row(report: SimulationReport, plan_id: str, evaluator: str) -> str:
    return (
        f"{plan_id},{evaluator},{report.runs},"
        f"{report.success_rate!r},{report.std_error!r},{report.wall_time:.3f}"
    )


class DpPolicy:
    """Plays the exact optimal action, lazily solving states as they appear."""

    def __init__(self, cg: CondensedGraph, memo_limit: int = 1_000_000):
        self._solver = ExactSolver(cg, memo_limit=memo_limit)

    def __call__(self, s: State) -> int:
        action = self._solver.best_action(s)
        if action is None:
            raise PolicyContractError(f"no action available in state {s}")
        return action


def _uniform_tape(
    seed: int, first_run: int, n_runs: int, draws_per_run: int
) -> np.ndarray:
    """Uniforms for runs [first_run, first_run + n_runs), one row per run."""
    bitgen = np.random.PCG64(seed)
    bitgen.advance(first_run * draws_per_run)
    rng = np.random.Generator(bitgen)
    return rng.random((n_runs, draws_per_run))


def _report(runs: int, successes: int, started: float) -> SimulationReport:
    rate = successes / runs
    return SimulationReport(
        runs=runs,
        successes=successes,
        success_rate=rate,
        std_error=sqrt(rate * (1.0 - rate) / runs),
        wall_time=time.perf_counter() - started,
    )


def _checked_action(cg: CondensedGraph, state: State, policy: Policy) -> int:
    action = policy(state)
    nsp = cg.nsps[action] if 0 <= action < cg.n_nsps else None
    if nsp is None or state[action] != UNATTEMPTED:
        raise PolicyContractError(
            f"policy chose inadmissible path {action} in state {state}"
        )
    owned = set(cg.entry_nodes)
    for i, mark in enumerate(state):
        if mark == SUCCESS:
            owned.add(cg.nsps[i].terminal)
    if nsp.source not in owned:
        raise PolicyContractError(
            f"policy chose path {action} from an unreached node in state {state}"
        )
    return action


def _settle(
    cg: CondensedGraph,
    groups: dict,
    key: tuple,
    rows: np.ndarray,
) -> int:
    """File rows under a state key, or absorb them if the state is terminal.

    Returns the number of rows absorbed as successes.
    """
    value = terminal_value(cg, key[0])
    if value is None:
        if key in groups:
            groups[key] = np.concatenate([groups[key], rows])
        else:
            groups[key] = rows
        return 0
    return len(rows) if value == 1.0 else 0


def simulate(
    cg: CondensedGraph,
    plan: Sequence[int] | None,
    policy: Policy,
    runs: int,
    seed: int,
    first_run: int = 0,
    chunk_size: int = 65536,
) -> SimulationReport:
    """Play the condensed game, one uniform draw per attempted path."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    started = time.perf_counter()
    start = initial_state(cg, plan)
    draws_per_run = cg.n_nsps
    dist_cache: dict[tuple[State, int], tuple[np.ndarray, list[State]]] = {}

    successes = 0
    done = 0
    while done < runs:
        n = min(chunk_size, runs - done)
        tape = _uniform_tape(seed, first_run + done, n, draws_per_run)
        groups: dict[tuple[State, int], np.ndarray] = {}
        successes += _settle(cg, groups, (start, 0), np.arange(n))
        while groups:
            (state, depth), rows = groups.popitem()
            action = _checked_action(cg, state, policy)
            cached = dist_cache.get((state, action))
            if cached is None:
                dist = transition(cg, state, action)
                cum = np.cumsum([p for _, p in dist.outcomes])
                nexts = [s for s, _ in dist.outcomes]
                dist_cache[(state, action)] = (cum, nexts)
            else:
                cum, nexts = cached
            u = tape[rows, depth]
            pick = np.searchsorted(cum, u, side="right")
            for idx in range(len(nexts)):
                sub = rows[pick == idx]
                if len(sub):
                    successes += _settle(cg, groups, (nexts[idx], depth + 1), sub)
            # draws beyond the last outcome land in the detection mass
        done += n
    return _report(runs, successes, started)


def simulate_on_original(
    cg: CondensedGraph,
    plan: Sequence[int] | None,
    policy: Policy,
    runs: int,
    seed: int,
    first_run: int = 0,
    chunk_size: int = 65536,
) -> SimulationReport:
    """Play on the raw graph edges with blocked edges forced to fail.

    A blocked edge has its failure rate raised to 100%, so an attacker who
    walks into one is stopped on the spot.  Every path through a blocked
    edge starts the game failed, so an admissible policy never actually
    draws on a blocked edge; the override exists to make the defence
    physical rather than notational.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    started = time.perf_counter()
    blocked: set[int] = set()
    if plan is not None:
        if len(plan) != len(cg.bw_edges):
            raise ValueError(
                f"plan has {len(plan)} coordinates, expected {len(cg.bw_edges)}"
            )
        blocked = {cg.bw_edges[i] for i, bit in enumerate(plan) if bit}
    n_edges = len(cg.graph.edges)
    p_detect = np.empty(n_edges)
    p_stop = np.empty(n_edges)  # detection or failure, the walk ends either way
    for i, e in enumerate(cg.graph.edges):
        if i in blocked:
            p_detect[i], p_stop[i] = 0.0, 1.0
        else:
            p_detect[i], p_stop[i] = e.p_d, e.p_d + e.p_f

    start = initial_state(cg, plan)
    draws_per_run = sum(len(p.edges) for p in cg.nsps)
    nsp_edges = [np.asarray(p.edges, dtype=np.intp) for p in cg.nsps]
    sharers = cg.edge_to_nsps
    da_ids = set(cg.da_nsp_ids)

    successes = 0
    done = 0
    while done < runs:
        n = min(chunk_size, runs - done)
        tape = _uniform_tape(seed, first_run + done, n, draws_per_run)
        groups: dict[tuple[State, int], np.ndarray] = {}
        successes += _settle(cg, groups, (start, 0), np.arange(n))
        while groups:
            (state, ptr), rows = groups.popitem()
            action = _checked_action(cg, state, policy)
            edges = nsp_edges[action]
            width = len(edges)
            draws = tape[rows, ptr : ptr + width]
            stopped = draws < p_stop[edges]
            any_stop = stopped.any(axis=1)
            first = np.argmax(stopped, axis=1)
            walked = rows[~any_stop]
            if len(walked):
                nxt = list(state)
                nxt[action] = SUCCESS
                if action in da_ids:
                    successes += len(walked)
                else:
                    successes += _settle(
                        cg, groups, (tuple(nxt), ptr + width), walked
                    )
            if not any_stop.any():
                continue
            hit_rows = rows[any_stop]
            hit_at = first[any_stop]
            u_hit = draws[any_stop, hit_at]
            detected = u_hit < p_detect[edges[hit_at]]
            # detected runs simply end; failed runs burn the edge's paths
            fail_rows = hit_rows[~detected]
            fail_at = hit_at[~detected]
            for pos in np.unique(fail_at):
                sub = fail_rows[fail_at == pos]
                nxt = list(state)
                for other in sharers[int(edges[pos])]:
                    if nxt[other] == UNATTEMPTED:
                        nxt[other] = FAILED
                successes += _settle(
                    cg, groups, (tuple(nxt), ptr + int(pos) + 1), sub
                )
        done += n
    return _report(runs, successes, started)
