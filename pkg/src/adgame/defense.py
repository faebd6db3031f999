"""Defender strategies: which block-worthy edges to cut under a budget.

A blocking plan is a bit vector over the block-worthy edges with exactly k
ones.  Fitness is the attacker's success probability under the plan (lower
is better), computed by an exact solver, the value network, or Monte Carlo.

The diversity-driven evolutionary search keeps a population of plans whose
fitness stays within a fixed band of the population best; survivor
selection removes the member whose absence leaves the most balanced
per-edge usage counts.  The value-based variant simply drops the worst
member.  Greedy and exhaustive searches complete the baseline set.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Callable, Sequence

import numpy as np

from .kernel import CondensedGraph
from .mdp import ExactSolver, initial_state
from .simulate import Policy, simulate
from .valuenet import ValueNet, predict

Plan = tuple[int, ...]
FITNESS_BAND = 0.1


class DefenseConfigError(Exception):
    """The requested defence cannot be run with the given budget or limits."""


class PopulationFormatError(Exception):
    """A population snapshot file is malformed."""


@dataclass(frozen=True)
class Member:
    bits: Plan
    fitness: float
    born: int


Population = list[Member]


def best_member(pop: Population) -> Member:
    return min(pop, key=lambda m: (m.fitness, m.born))


def random_plan(n_bits: int, k: int, rng: np.random.Generator) -> Plan:
    if not 0 <= k <= n_bits:
        raise DefenseConfigError(f"budget {k} not in [0, {n_bits}]")
    bits = [0] * n_bits
    if k:
        for pos in rng.choice(n_bits, size=k, replace=False):
            bits[pos] = 1
    return tuple(bits)


def mutate(plan: Plan, x: int, rng: np.random.Generator) -> Plan:
    """Flip x ones to zeros and x zeros to ones, preserving the popcount.

    x is clamped to what the plan can support; a full or empty plan is
    returned unchanged.
    """
    ones = [i for i, b in enumerate(plan) if b]
    zeros = [i for i, b in enumerate(plan) if not b]
    x = min(x, len(ones), len(zeros))
    if x < 1:
        return plan
    bits = list(plan)
    for pos in rng.choice(len(ones), size=x, replace=False):
        bits[ones[pos]] = 0
    for pos in rng.choice(len(zeros), size=x, replace=False):
        bits[zeros[pos]] = 1
    return tuple(bits)


def crossover(
    p: Plan, q: Plan, x: int, rng: np.random.Generator
) -> tuple[Plan, Plan]:
    """Swap x disagreeing coordinates between two equal-popcount plans.

    Coordinates where p is 0 and q is 1 trade against coordinates where p
    is 1 and q is 0, so both children keep their parents' popcount.
    Identical parents come back unchanged.
    """
    gain = [i for i in range(len(p)) if not p[i] and q[i]]
    lose = [i for i in range(len(p)) if p[i] and not q[i]]
    x = min(x, len(gain))
    if x < 1:
        return p, q
    child_p = list(p)
    child_q = list(q)
    for pos in rng.choice(len(gain), size=x, replace=False):
        child_p[gain[pos]] = 1
        child_q[gain[pos]] = 0
    for pos in rng.choice(len(lose), size=x, replace=False):
        child_p[lose[pos]] = 0
        child_q[lose[pos]] = 1
    return tuple(child_p), tuple(child_q)


def _worst_index(pop: Population) -> int:
    worst = 0
    for j in range(1, len(pop)):
        m = pop[j]
        if m.fitness > pop[worst].fitness or (
            m.fitness == pop[worst].fitness and m.born < pop[worst].born
        ):
            worst = j
    return worst


def diversity_select_removal(pop: Population) -> int:
    """Index of the member whose removal leaves the most balanced counts.

    The population must carry the freshly inserted candidate as its last
    element.  If that candidate strictly beats every other fitness, the
    worst member is removed instead so the new best is always retained.
    Otherwise each member's residual count vector (per-edge block counts
    minus its own bits, sorted descending) is compared; the
    lexicographically smallest residual loses, oldest member first on ties.
    """
    if len(pop) < 2:
        raise ValueError("removal needs at least two members")
    candidate = pop[-1]
    if all(candidate.fitness < m.fitness for m in pop[:-1]):
        return _worst_index(pop)
    counts = np.sum([m.bits for m in pop], axis=0)
    chosen = 0
    chosen_key = None
    for j, m in enumerate(pop):
        residual = tuple(sorted(counts - np.asarray(m.bits), reverse=True))
        key = (residual, m.born)
        if chosen_key is None or key < chosen_key:
            chosen, chosen_key = j, key
    return chosen


FitnessFn = Callable[[Plan], float]


class ExactFitness:
    """Attacker value of the blocked game, solved exactly and memoized."""

    kind = "exact"

    def __init__(self, cg: CondensedGraph, memo_limit: int = 1_000_000):
        self.cg = cg
        self._solver = ExactSolver(cg, memo_limit=memo_limit)
        self._cache: dict[Plan, float] = {}

    def __call__(self, plan: Sequence[int]) -> float:
        bits = tuple(plan)
        value = self._cache.get(bits)
        if value is None:
            value = self._solver.value(initial_state(self.cg, bits))
            self._cache[bits] = value
        return value


class NetFitness:
    """Value-network estimate of the blocked game, cheap but approximate."""

    kind = "net"

    def __init__(self, net: ValueNet, cg: CondensedGraph):
        self.net = net
        self.cg = cg

    def __call__(self, plan: Sequence[int]) -> float:
        return predict(self.net, self.cg, initial_state(self.cg, tuple(plan)))


class MonteCarloFitness:
    """Simulated success rate under a fixed policy, deterministic per seed."""

    kind = "monte-carlo"

    def __init__(
        self, cg: CondensedGraph, policy: Policy, runs: int, seed: int
    ):
        self.cg = cg
        self.policy = policy
        self.runs = runs
        self.seed = seed

    def __call__(self, plan: Sequence[int]) -> float:
        report = simulate(self.cg, tuple(plan), self.policy, self.runs, self.seed)
        return report.success_rate


def _initial_population(
    n_bits: int, k: int, mu: int, fit: FitnessFn, rng: np.random.Generator
) -> Population:
    return [
        Member(bits, fit(bits), born=i)
        for i, bits in enumerate(random_plan(n_bits, k, rng) for _ in range(mu))
    ]


def _evolve(
    cg: CondensedGraph,
    ev: FitnessFn,
    k: int,
    mu: int,
    iterations: int,
    rng: np.random.Generator,
    diversity: bool,
) -> Population:
    n_bits = len(cg.bw_edges)
    if k > n_bits:
        raise DefenseConfigError(f"budget {k} exceeds {n_bits} block-worthy edges")
    if mu < 1 or iterations < 0:
        raise DefenseConfigError("need a positive population and nonnegative iterations")
    cache: dict[Plan, float] = {}

    def fit(bits: Plan) -> float:
        value = cache.get(bits)
        if value is None:
            value = float(ev(bits))
            cache[bits] = value
        return value

    pop = _initial_population(n_bits, k, mu, fit, rng)
    born = mu
    for _ in range(iterations):
        x = max(1, int(rng.poisson(1.0)))
        if rng.random() < 0.5:
            parent = pop[int(rng.integers(len(pop)))]
            children = [mutate(parent.bits, x, rng)]
        else:
            if len(pop) >= 2:
                i, j = rng.choice(len(pop), size=2, replace=False)
                a, b = pop[int(i)].bits, pop[int(j)].bits
            else:
                a = b = pop[0].bits
            children = list(crossover(a, b, x, rng))
        for bits in children:
            f = fit(bits)
            if diversity:
                best = min(m.fitness for m in pop)
                if f > best + FITNESS_BAND:
                    continue
            pop.append(Member(bits, f, born))
            born += 1
            if len(pop) > mu:
                idx = (
                    diversity_select_removal(pop) if diversity else _worst_index(pop)
                )
                del pop[idx]
            if diversity:
                best = min(m.fitness for m in pop)
                pop = [m for m in pop if m.fitness <= best + FITNESS_BAND]
    return pop


def edo_run(
    cg: CondensedGraph,
    ev: FitnessFn,
    k: int,
    mu: int = 100,
    iterations: int = 10000,
    rng: np.random.Generator | None = None,
) -> Population:
    """Diversity-driven evolutionary search over blocking plans.

    Candidates worse than the population best by more than the fitness band
    are rejected; members that fall out of the band when the best improves
    are evicted, so every returned member (after at least one iteration)
    sits within the band.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    return _evolve(cg, ev, k, mu, iterations, rng, diversity=True)


def vec_run(
    cg: CondensedGraph,
    ev: FitnessFn,
    k: int,
    mu: int = 100,
    iterations: int = 10000,
    rng: np.random.Generator | None = None,
) -> Population:
    """Same loop as edo_run, but survivor selection drops the worst member."""
    if rng is None:
        rng = np.random.default_rng(0)
    return _evolve(cg, ev, k, mu, iterations, rng, diversity=False)


def greedy_run(cg: CondensedGraph, ev: FitnessFn, k: int) -> Plan:
    """Block the single best remaining edge, k times; ties to smaller ids."""
    n_bits = len(cg.bw_edges)
    if k > n_bits:
        raise DefenseConfigError(f"budget {k} exceeds {n_bits} block-worthy edges")
    bits = [0] * n_bits
    for _ in range(k):
        best_pos = -1
        best_f = float("inf")
        for pos in range(n_bits):
            if bits[pos]:
                continue
            bits[pos] = 1
            f = float(ev(tuple(bits)))
            bits[pos] = 0
            if f < best_f:
                best_pos, best_f = pos, f
        bits[best_pos] = 1
    return tuple(bits)


def exhaustive_run(
    cg: CondensedGraph,
    ev: FitnessFn,
    k: int,
    enumeration_budget: int = 1_000_000,
) -> Plan:
    """Global argmin over all popcount-k plans; ties to the smallest bits."""
    n_bits = len(cg.bw_edges)
    if k > n_bits:
        raise DefenseConfigError(f"budget {k} exceeds {n_bits} block-worthy edges")
    total = comb(n_bits, k)
    if total > enumeration_budget:
        raise DefenseConfigError(
            f"{total} plans exceed the enumeration budget of {enumeration_budget}"
        )
    best_bits: Plan | None = None
    best_f = float("inf")
    for positions in combinations(range(n_bits), k):
        bits = tuple(1 if i in positions else 0 for i in range(n_bits))
        f = float(ev(bits))
        if f < best_f or (f == best_f and bits < best_bits):
            best_bits, best_f = bits, f
    return best_bits


def save_population(path: str, pop: Population) -> None:
    """Text snapshot: one `bits fitness` row per member."""
    n_bits = len(pop[0].bits) if pop else 0
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"adpop 1 {len(pop)} {n_bits}\n")
        for m in pop:
            fh.write(f"{''.join(str(b) for b in m.bits)} {m.fitness!r}\n")


def load_population(path: str) -> Population:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise PopulationFormatError("empty population file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "adpop" or head[1] != "1":
        raise PopulationFormatError(f"bad header: {lines[0]!r}")
    try:
        n_members, n_bits = int(head[2]), int(head[3])
    except ValueError as exc:
        raise PopulationFormatError(f"bad header counts: {lines[0]!r}") from exc
    rows = [line for line in lines[1:] if line.strip()]
    if len(rows) != n_members:
        raise PopulationFormatError(
            f"expected {n_members} members, found {len(rows)}"
        )
    pop: Population = []
    for at, line in enumerate(rows):
        parts = line.split()
        if len(parts) != 2 or len(parts[0]) != n_bits:
            raise PopulationFormatError(f"line {at + 2}: bad row {line!r}")
        if any(c not in "01" for c in parts[0]):
            raise PopulationFormatError(f"line {at + 2}: bits must be 0/1")
        try:
            fitness = float(parts[1])
        except ValueError as exc:
            raise PopulationFormatError(f"line {at + 2}: bad fitness") from exc
        pop.append(Member(tuple(int(c) for c in parts[0]), fitness, born=at))
    return pop
