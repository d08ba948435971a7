"""Agent-based Monte Carlo on random k-regular graphs.

Asynchronous updating: each event picks one focal node, and ``n`` events
advance model time by one unit, so agent time matches the replicator time
of the mean-field equations. The active rule for an event at time ``e/n`` is
read from the switching schedule.

Random numbers come from numpy's Philox (counter-based) generator. Every event
consumes three uniforms in a fixed order, so the pure-Python event functions
and the compiled event loop produce identical runs from the same stream.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import GenerationFailed, InvalidDegreeSequence, InvalidParams, NegativeFitness
from .game import C, D, GameParams, RuleKind
from .switched import SwitchSchedule, signal_at

RNG_ALGORITHM = "numpy.random.Philox (4x64, counter-based)"
GRAPH_RETRY_BUDGET = 1000
_EVENT_UNIFORMS = 3


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class RegularGraph:
    n: int
    k: int
    adjacency: np.ndarray  # (n, k) neighbour indices

    def edges(self) -> np.ndarray:
        i = np.repeat(np.arange(self.n), self.k)
        j = self.adjacency.ravel()
        keep = i < j
        return np.column_stack([i[keep], j[keep]])


def _is_connected(n: int, edges: np.ndarray) -> bool:
    g = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    n_comp, _ = connected_components(g, directed=False)
    return n_comp == 1


def build_regular_graph(n: int, k: int, seed=None) -> RegularGraph:
    """Random simple connected k-regular graph by stub pairing.

    Any self-loop, multi-edge or disconnection restarts the pairing from
    scratch; gives up after GRAPH_RETRY_BUDGET attempts.
    """
    if k <= 2:
        raise InvalidDegreeSequence(f"degree must exceed 2, got k={k}")
    if n <= k:
        raise InvalidDegreeSequence(f"need n > k, got n={n}, k={k}")
    if (n * k) % 2:
        raise InvalidDegreeSequence(f"n*k must be even, got n={n}, k={k}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(0 if seed is None else seed)
    stubs = np.repeat(np.arange(n, dtype=np.int64), k)
    for _ in range(GRAPH_RETRY_BUDGET):
        pairs = rng.permutation(stubs).reshape(-1, 2)
        lo, hi = pairs.min(axis=1), pairs.max(axis=1)
        if np.any(lo == hi):
            continue
        keys = lo * n + hi
        if np.unique(keys).size != keys.size:
            continue
        edges = np.column_stack([lo, hi])
        if not _is_connected(n, edges):
            continue
        order = np.argsort(np.concatenate([lo, hi]), kind="stable")
        nbrs = np.concatenate([hi, lo])[order]
        return RegularGraph(n, k, nbrs.reshape(n, k).astype(np.int32))
    raise GenerationFailed(f"no simple connected {k}-regular graph on {n} nodes after {GRAPH_RETRY_BUDGET} attempts")


@dataclass
class Population:
    """Strategies on a graph, with per-node cooperating-neighbour counts cached."""

    graph: RegularGraph
    strategies: np.ndarray
    rng_seed: int = 0
    rng: np.random.Generator = field(default=None, repr=False)
    coop_neighbors: np.ndarray = field(init=False, repr=False)
    n_coop: int = field(init=False)
    n_cc_edges: int = field(init=False)

    def __post_init__(self):
        # private copy: flips must not write through to the caller's array
        self.strategies = np.array(self.strategies, dtype=np.int8)
        if self.strategies.shape != (self.graph.n,):
            raise ValueError("one strategy per node required")
        if not np.all((self.strategies == C) | (self.strategies == D)):
            raise ValueError("strategies must be 0 (D) or 1 (C)")
        if self.rng is None:
            self.rng = make_rng(self.rng_seed)
        self.recount()

    def recount(self):
        s = self.strategies.astype(np.int32)
        self.coop_neighbors = s[self.graph.adjacency].sum(axis=1).astype(np.int32)
        self.n_coop = int(s.sum())
        self.n_cc_edges = int((s * self.coop_neighbors).sum()) // 2

    @classmethod
    def random(cls, graph: RegularGraph, x0: float, seed: int = 0, exact: bool = False, rng=None):
        """Bernoulli(x0) strategies, or exactly floor(x0 n) cooperators if ``exact``."""
        if not 0.0 <= x0 <= 1.0:
            raise ValueError(f"x0 must lie in [0, 1], got {x0}")
        rng = make_rng(seed) if rng is None else rng
        if exact:
            s = np.zeros(graph.n, dtype=np.int8)
            s[rng.permutation(graph.n)[: int(math.floor(x0 * graph.n))]] = C
        else:
            s = (rng.random(graph.n) < x0).astype(np.int8)
        return cls(graph, s, rng_seed=seed, rng=rng)

    @property
    def x_c(self) -> float:
        return self.n_coop / self.graph.n

    @property
    def x_cc(self) -> float:
        """Measured x_{C|C}; NaN when there are no cooperators."""
        if self.n_coop == 0:
            return float("nan")
        return 2.0 * self.n_cc_edges / (self.graph.k * self.n_coop)

    def payoff(self, i: int, b: float, c: float) -> float:
        return b * self.coop_neighbors[i] - c * self.graph.k * self.strategies[i]

    def flip(self, i: int):
        nb = self.graph.adjacency[i]
        if self.strategies[i] == C:
            self.strategies[i] = D
            self.coop_neighbors[nb] -= 1
            self.n_coop -= 1
            self.n_cc_edges -= int(self.coop_neighbors[i])
        else:
            self.strategies[i] = C
            self.coop_neighbors[nb] += 1
            self.n_coop += 1
            self.n_cc_edges += int(self.coop_neighbors[i])


def _check_im_weights(p: GameParams):
    if 1.0 - p.omega - p.omega * p.k * p.c < 0:
        raise NegativeFitness(
            f"imitation weights can go negative: 1 - omega - omega*k*c = {1 - p.omega - p.omega * p.k * p.c:.4g}"
        )


def _uniforms(pop: Population, u):
    return pop.rng.random(_EVENT_UNIFORMS) if u is None else u


def pc_update_event(pop: Population, p: GameParams, u=None):
    """One pairwise-comparison event; returns the flipped node or None.

    The focal node copies a random neighbour with Fermi probability
    1 / (1 + exp(-omega (pi_neighbour - pi_focal))).
    """
    u = _uniforms(pop, u)
    n, k = pop.graph.n, pop.graph.k
    f = min(int(u[0] * n), n - 1)
    j = pop.graph.adjacency[f, min(int(u[1] * k), k - 1)]
    if pop.strategies[f] == pop.strategies[j]:
        return None
    diff = pop.payoff(j, p.b, p.c) - pop.payoff(f, p.b, p.c)
    if u[2] < 1.0 / (1.0 + math.exp(-p.omega * diff)):
        pop.flip(f)
        return f
    return None


def im_update_event(pop: Population, p: GameParams, u=None):
    """One imitation event; returns the flipped node or None.

    The focal node takes the strategy of itself or one of its neighbours,
    chosen with probability proportional to fitness 1 - omega + omega * pi.
    """
    _check_im_weights(p)
    u = _uniforms(pop, u)
    n, k = pop.graph.n, pop.graph.k
    f = min(int(u[0] * n), n - 1)
    g_self = 1.0 - p.omega + p.omega * pop.payoff(f, p.b, p.c)
    g_c = g_d = 0.0
    for j in pop.graph.adjacency[f]:
        g = 1.0 - p.omega + p.omega * pop.payoff(j, p.b, p.c)
        if pop.strategies[j] == C:
            g_c += g
        else:
            g_d += g
    total = g_c + g_d + g_self
    if total <= 0.0:
        return None
    if u[1] * total < g_c:
        new = C
    elif u[1] * total < g_c + g_d:
        new = D
    else:
        return None
    if new != pop.strategies[f]:
        pop.flip(f)
        return f
    return None


@njit(cache=True, nogil=True)
def _flip(i, strat, ncoop, adj, k, counts):
    if strat[i] == 1:
        strat[i] = 0
        for a in range(k):
            ncoop[adj[i, a]] -= 1
        counts[0] -= 1
        counts[1] -= ncoop[i]
    else:
        strat[i] = 1
        for a in range(k):
            ncoop[adj[i, a]] += 1
        counts[0] += 1
        counts[1] += ncoop[i]


@njit(cache=True, nogil=True)
def _run_events(strat, ncoop, adj, counts, uni, e0, n, bounds, codes, period, omega, b, c):
    # counts = [n_coop, n_cc_edges]; event e happens at time e / n
    k = adj.shape[1]
    m = codes.shape[0]
    for r in range(uni.shape[0]):
        t = (e0 + r) / n
        theta = math.floor(t / period)
        phase = t - theta * period
        if phase < 0.0:
            phase += period
        elif phase >= period:
            phase -= period
        i = 1
        while i < m and phase >= bounds[i]:
            i += 1
        rule = codes[i - 1]
        f = int(uni[r, 0] * n)
        if f > n - 1:
            f = n - 1
        if rule == 0:
            a = int(uni[r, 1] * k)
            if a > k - 1:
                a = k - 1
            j = adj[f, a]
            if strat[f] == strat[j]:
                continue
            pj = b * ncoop[j] - c * k * strat[j]
            pf = b * ncoop[f] - c * k * strat[f]
            if uni[r, 2] < 1.0 / (1.0 + math.exp(-omega * (pj - pf))):
                _flip(f, strat, ncoop, adj, k, counts)
        else:
            g_self = 1.0 - omega + omega * (b * ncoop[f] - c * k * strat[f])
            g_c = 0.0
            g_d = 0.0
            for a in range(k):
                j = adj[f, a]
                g = 1.0 - omega + omega * (b * ncoop[j] - c * k * strat[j])
                if strat[j] == 1:
                    g_c += g
                else:
                    g_d += g
            total = g_c + g_d + g_self
            if total <= 0.0:
                continue
            x = uni[r, 1] * total
            if x < g_c:
                new = 1
            elif x < g_c + g_d:
                new = 0
            else:
                continue
            if new != strat[f]:
                _flip(f, strat, ncoop, adj, k, counts)


@dataclass
class SimulationResult:
    t: np.ndarray
    x_c: np.ndarray
    x_cc: np.ndarray


def _schedule_codes(s: SwitchSchedule) -> np.ndarray:
    codes = []
    for r in s.rules:
        if r.kind is RuleKind.PC:
            codes.append(0)
        elif r.kind is RuleKind.IM:
            codes.append(1)
        else:
            raise InvalidParams("the agent engine supports PC and IM rules only")
    return np.array(codes, dtype=np.int64)


def _sample_events(n: int, t_end: float, sample_dt: float) -> list:
    total = math.ceil(n * t_end - 1e-9)
    n_samples = int(math.floor(t_end / sample_dt + 1e-9))
    marks = [min(total, int(round(j * sample_dt * n))) for j in range(1, n_samples + 1)]
    if not marks or marks[-1] != total:
        marks.append(total)
    return marks


def run_switched_simulation(
    pop: Population,
    s: SwitchSchedule,
    p: GameParams,
    t_end: float,
    sample_dt: float = 1.0,
    python_events: bool = False,
) -> SimulationResult:
    """Run ceil(n t_end) events under the schedule, sampling every ``sample_dt``.

    ``python_events`` routes every event through the pure-Python event
    functions (slow; used to cross-check the compiled loop).
    """
    if t_end <= 0 or sample_dt <= 0:
        raise ValueError("t_end and sample_dt must be positive")
    codes = _schedule_codes(s)
    if np.any(codes == 1):
        _check_im_weights(p)
    n, k = pop.graph.n, pop.graph.k
    bounds = np.asarray(s.boundaries, dtype=float)
    counts = np.array([pop.n_coop, pop.n_cc_edges], dtype=np.int64)

    ts, xs, ys = [0.0], [pop.x_c], [pop.x_cc]
    e = 0
    for mark in _sample_events(n, t_end, sample_dt):
        uni = pop.rng.random((mark - e, _EVENT_UNIFORMS))
        if python_events:
            for r in range(uni.shape[0]):
                rule = codes[signal_at(s, (e + r) / n)[0] - 1]
                (pc_update_event if rule == 0 else im_update_event)(pop, p, uni[r])
        else:
            _run_events(pop.strategies, pop.coop_neighbors, pop.graph.adjacency, counts, uni,
                        e, n, bounds, codes, s.period, float(p.omega), float(p.b), float(p.c))
            pop.n_coop, pop.n_cc_edges = int(counts[0]), int(counts[1])
        e = mark
        ts.append(e / n)
        xs.append(pop.x_c)
        ys.append(pop.x_cc)
    return SimulationResult(np.array(ts), np.array(xs), np.array(ys))


@dataclass(frozen=True)
class SimulationSpec:
    params: GameParams
    schedule: SwitchSchedule
    x0: float
    t_end: float
    sample_dt: float = 1.0
    exact_init: bool = False


@dataclass
class EnsembleStats:
    t: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    x_cc_mean: np.ndarray
    x_cc_std: np.ndarray
    runs: int
    x_runs: np.ndarray  # (runs, samples)
    x_cc_runs: np.ndarray
    rng_algorithm: str = RNG_ALGORITHM

    def x_sem(self) -> np.ndarray:
        if self.runs < 2:
            return np.zeros_like(self.x_mean)
        return self.x_runs.std(axis=0, ddof=1) / math.sqrt(self.runs)


def run_replicate(spec: SimulationSpec, seed: int) -> SimulationResult:
    """One independent run: graph, initial strategies and events all drawn from ``seed``."""
    p = spec.params
    if p.n is None:
        raise InvalidParams("population size n is required for the agent engine")
    rng = make_rng(seed)
    graph = build_regular_graph(p.n, p.k, rng)
    pop = Population.random(graph, spec.x0, seed=seed, exact=spec.exact_init, rng=rng)
    return run_switched_simulation(pop, spec.schedule, p, spec.t_end, spec.sample_dt)


def _workers(runs: int) -> int:
    try:
        cap = int(os.environ.get("SWITCHREP_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, runs))


def run_ensemble(spec: SimulationSpec, runs: int, base_seed: int = 0) -> EnsembleStats:
    """Replicates seeded base_seed + i; the result depends only on the arguments."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    seeds = [base_seed + i for i in range(runs)]
    workers = _workers(runs)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda sd: run_replicate(spec, sd), seeds))
    else:
        results = [run_replicate(spec, sd) for sd in seeds]
    xr = np.vstack([r.x_c for r in results])
    yr = np.vstack([r.x_cc for r in results])
    # x_cc is NaN in runs without cooperators; an all-NaN column stays NaN
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        y_mean = np.nanmean(yr, axis=0) if np.isnan(yr).any() else yr.mean(axis=0)
        y_std = np.nanstd(yr, axis=0) if np.isnan(yr).any() else yr.std(axis=0)
    return EnsembleStats(
        t=results[0].t,
        x_mean=xr.mean(axis=0),
        x_std=xr.std(axis=0),
        x_cc_mean=y_mean,
        x_cc_std=y_std,
        runs=runs,
        x_runs=xr,
        x_cc_runs=yr,
    )
