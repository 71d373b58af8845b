"""Continuous-time simulation of restrained branching random walks.

Each particle dies at rate 1 and proposes a child at rate ``c(0) zeta(x)``;
the child is sent to ``y`` with probability ``mu(x, y) / zeta(x)`` and the
birth is kept with probability ``c(eta(y)) / c(0)``. The BRW, the k-type
contact process and the logistic process differ only in ``c``.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .errors import InvalidCouplingError, InvalidParameterError, InvalidRateError
from .kernel import FiniteGraph
from .rng import TAG_TRIALS, check_seed, stream

MAX_POPULATION = 10**6
EVENT_NAMES = ("death", "birth-accepted", "birth-rejected")


@dataclass(frozen=True)
class RateProfile:
    """Success-rate function ``c`` on occupancies ``0, 1, 2, ...``.

    ``values`` holds ``c(0..J-1)`` and ``tail`` is ``c(i)`` for every ``i >= J``.
    Build instances with :meth:`brw`, :meth:`ktype`, :meth:`logistic` or
    :meth:`table`.
    """

    kind: str
    values: tuple[float, ...]
    tail: float
    lam: float
    k: int | None = None
    N: float | None = None

    def __post_init__(self):
        vals = np.asarray(self.values + (self.tail,), dtype=float)
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise InvalidRateError("success rates must be finite and nonnegative")
        if np.any(np.diff(vals) > 0):
            raise InvalidRateError("success rate c must be nonincreasing in the occupancy")

    @classmethod
    def brw(cls, lam: float) -> RateProfile:
        return cls("brw", (float(lam),), float(lam), float(lam))

    @classmethod
    def ktype(cls, lam: float, k: int) -> RateProfile:
        if int(k) != k or k < 1:
            raise InvalidParameterError(f"k must be a positive integer, got {k}")
        return cls("ktype", (float(lam),) * int(k), 0.0, float(lam), k=int(k))

    @classmethod
    def logistic(cls, lam: float, N: float) -> RateProfile:
        if not N > 0:
            raise InvalidParameterError(f"N must be positive, got {N}")
        i = np.arange(int(math.floor(N)) + 1)
        vals = np.maximum(lam * (1.0 - i / N), 0.0)
        return cls("logistic", tuple(float(v) for v in vals), 0.0, float(lam), N=float(N))

    @classmethod
    def table(cls, values: Sequence[float]) -> RateProfile:
        vals = tuple(float(v) for v in values)
        if not vals:
            raise InvalidParameterError("a table profile needs at least c(0)")
        return cls("table", vals, 0.0, vals[0])

    def c(self, i: int) -> float:
        if i < 0:
            raise InvalidParameterError("occupancy must be nonnegative")
        return self.values[i] if i < len(self.values) else self.tail

    @property
    def c0(self) -> float:
        return self.values[0]

    @property
    def cap(self) -> int | None:
        """Largest occupancy a birth can create, or None if unbounded."""
        if self.tail > 0:
            return None
        nz = [i for i, v in enumerate(self.values) if v > 0]
        return nz[-1] + 1 if nz else 0

    def as_table(self, J: int) -> tuple[np.ndarray, float]:
        return np.array([self.c(i) for i in range(J)], dtype=float), self.tail

    def dominated_by(self, other: RateProfile) -> bool:
        J = max(len(self.values), len(other.values))
        a, _ = self.as_table(J)
        b, _ = other.as_table(J)
        return bool(np.all(a <= b)) and self.tail <= other.tail

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "lam": self.lam}
        if self.kind == "ktype":
            out["k"] = self.k
        elif self.kind == "logistic":
            out["N"] = self.N
        elif self.kind == "table":
            out = {"kind": "table", "values": list(self.values)}
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> RateProfile:
        kind = obj["kind"]
        if kind == "brw":
            return cls.brw(obj["lam"])
        if kind == "ktype":
            return cls.ktype(obj["lam"], obj["k"])
        if kind == "logistic":
            return cls.logistic(obj["lam"], obj["N"])
        if kind == "table":
            return cls.table(obj["values"])
        raise InvalidParameterError(f"unknown profile kind {kind!r}")


@dataclass
class ParticleConfiguration:
    """Sparse occupancy map from vertex index to particle count."""

    counts: dict[int, int] = field(default_factory=dict)
    progeny: int | None = None

    def __post_init__(self):
        self.counts = {int(x): int(n) for x, n in self.counts.items() if n != 0}
        if any(n < 0 for n in self.counts.values()):
            raise InvalidParameterError("occupancy counts must be nonnegative")
        if self.progeny is None:
            self.progeny = self.population

    @property
    def population(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, x: int) -> int:
        return self.counts.get(int(x), 0)

    @classmethod
    def single(cls, x: int, n: int = 1) -> ParticleConfiguration:
        return cls({int(x): int(n)})

    @classmethod
    def from_array(cls, a: np.ndarray, progeny: int | None = None) -> ParticleConfiguration:
        nz = np.nonzero(a)[0]
        return cls({int(i): int(a[i]) for i in nz}, progeny)

    def to_array(self, n_vertices: int) -> np.ndarray:
        out = np.zeros(n_vertices, dtype=np.int64)
        for x, n in self.counts.items():
            if not 0 <= x < n_vertices:
                raise IndexError(f"vertex {x} is not on the graph")
            out[x] = n
        return out


@dataclass(frozen=True)
class Caps:
    max_population: int = MAX_POPULATION
    max_progeny: int | None = None


@dataclass
class EventLog:
    time: np.ndarray
    vertex: np.ndarray
    kind: np.ndarray  # 0 death, 1 birth accepted, 2 birth rejected
    occupancy: np.ndarray  # occupancy of the vertex right after the event

    def __len__(self) -> int:
        return len(self.time)

    def replay(self, init: np.ndarray) -> np.ndarray:
        """Re-apply the log to ``init``; raises if any recorded occupancy disagrees."""
        eta = np.array(init, dtype=np.int64)
        for t, v, k, occ in zip(self.time, self.vertex, self.kind, self.occupancy):
            if k == 0:
                eta[v] -= 1
            elif k == 1:
                eta[v] += 1
            if eta[v] != occ or eta[v] < 0:
                raise AssertionError(f"log replay mismatch at t={t}, vertex {v}")
        return eta

    def write_csv(self, path, graph: FiniteGraph | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["time", "vertex", "point", "event", "occupancy_after"])
            for t, v, k, occ in zip(self.time, self.vertex, self.kind, self.occupancy):
                pt = " ".join(map(str, graph.point(int(v)))) if graph is not None else ""
                w.writerow([repr(float(t)), int(v), pt, EVENT_NAMES[k], int(occ)])


@dataclass
class TrajectoryObservables:
    events: int
    observation_times: np.ndarray
    origin_occupancy: np.ndarray
    extinction_time: float | None
    max_population: int
    truncated: bool
    exploded: bool
    window_hit: bool
    final: ParticleConfiguration
    visited: np.ndarray | None = None
    log: EventLog | None = None

    @property
    def survived(self) -> bool:
        return self.exploded or self.final.population > 0


def _as_init(graph: FiniteGraph, init) -> np.ndarray:
    if init is None:
        return ParticleConfiguration.single(graph.origin).to_array(graph.n_vertices)
    if isinstance(init, ParticleConfiguration):
        return init.to_array(graph.n_vertices)
    if isinstance(init, Mapping):
        out = np.zeros(graph.n_vertices, dtype=np.int64)
        for key, n in init.items():
            x = key if isinstance(key, (int, np.integer)) else graph.index(key)
            if not 0 <= x < graph.n_vertices:
                raise IndexError(f"vertex {x} is not on the graph")
            if n < 0:
                raise InvalidParameterError("occupancy counts must be nonnegative")
            out[x] += int(n)
        return out
    a = np.asarray(init, dtype=np.int64)
    if a.shape != (graph.n_vertices,):
        raise IndexError(f"init must have shape ({graph.n_vertices},)")
    if np.any(a < 0):
        raise InvalidParameterError("occupancy counts must be nonnegative")
    return a.copy()


def _vertex(graph: FiniteGraph, x) -> int:
    if x is None:
        return graph.origin
    if isinstance(x, (int, np.integer)):
        if not 0 <= x < graph.n_vertices:
            raise IndexError(f"vertex {x} is not on the graph")
        return int(x)
    return graph.index(x)


class CoupledEngine:
    """Precomputed arrays for running many trials of ordered variants.

    ``graphs[j]`` must be a subgraph of ``host`` (vertices and edges by offset)
    with rates no larger than the host's, and ``profiles`` / ``graphs`` /
    initial configurations must be pointwise nondecreasing in ``j``.
    """

    def __init__(
        self,
        host: FiniteGraph,
        profiles: Sequence[RateProfile],
        graphs: Sequence[FiniteGraph] | None = None,
        origin=None,
        caps: Caps = Caps(),
    ):
        if not profiles:
            raise InvalidParameterError("need at least one profile")
        graphs = list(graphs) if graphs is not None else [host] * len(profiles)
        if len(graphs) != len(profiles):
            raise InvalidParameterError("one graph per profile is required")
        if caps.max_population < 1:
            raise InvalidParameterError("max_population must be >= 1")
        if caps.max_progeny is not None and len(profiles) > 1:
            raise InvalidCouplingError("progeny truncation breaks the monotone coupling")
        self.host = host
        self.profiles = list(profiles)
        self.graphs = graphs
        self.caps = caps
        self.origin = _vertex(host, origin)
        V, E = host.n_vertices, host.n_edges
        nv = len(profiles)

        ratio = np.zeros((nv, E))
        self._maps = []
        for j, g in enumerate(graphs):
            if g is host:
                ratio[j] = 1.0
                self._maps.append(None)
                continue
            try:
                vmap = np.array([host.index(c) for c in g.coords.tolist()], dtype=np.int64)
            except IndexError:
                raise InvalidCouplingError(f"variant {j} has a vertex outside the host graph") from None
            self._maps.append(vmap)
            # host edge id keyed by (host source, offset id)
            hsrc = host.sources
            key = {(int(s), int(o)): e for e, (s, o) in enumerate(zip(hsrc, host.offset_ids))}
            for e, (s, o) in enumerate(zip(g.sources, g.offset_ids)):
                he = key.get((int(vmap[s]), int(o)))
                if he is None or vmap[g.targets[e]] != host.targets[he]:
                    raise InvalidCouplingError(f"variant {j} has an edge missing from the host graph")
                if g.rates[e] > host.rates[he] * (1 + 1e-12):
                    raise InvalidCouplingError(f"variant {j} has a rate above the host rate")
                ratio[j, he] = min(g.rates[e] / host.rates[he], 1.0)
        for j in range(nv - 1):
            if not profiles[j].dominated_by(profiles[j + 1]):
                raise InvalidCouplingError(f"profile {j} is not pointwise below profile {j + 1}")
            if np.any(ratio[j] > ratio[j + 1]):
                raise InvalidCouplingError(f"graph {j} is not contained in graph {j + 1}")
        J = max(len(p.values) for p in profiles)
        tabs = [p.as_table(J) for p in profiles]
        self.ctab = np.ascontiguousarray(np.array([t[0] for t in tabs]))
        self.ctail = np.array([t[1] for t in tabs])
        self.c0 = float(max(p.c0 for p in profiles))
        self.ratio = np.ascontiguousarray(ratio)

        zeta = host.zeta
        cum = np.zeros(E)
        for x in range(V):
            lo, hi = host.indptr[x], host.indptr[x + 1]
            if hi > lo:
                c = np.cumsum(host.rates[lo:hi]) / zeta[x]
                c[-1] = 1.0
                cum[lo:hi] = c
        self.cumprob = cum
        self.zeta = np.ascontiguousarray(zeta, dtype=float)
        self.indptr = np.ascontiguousarray(host.indptr, dtype=np.int64)
        self.targets = np.ascontiguousarray(host.targets, dtype=np.int64)

    def host_init(self, inits: Sequence) -> np.ndarray:
        nv = len(self.profiles)
        out = np.zeros((nv, self.host.n_vertices), dtype=np.int64)
        for j in range(nv):
            g = self.graphs[j]
            a = _as_init(g, inits[j] if isinstance(inits, (list, tuple)) else inits)
            if self._maps[j] is None:
                out[j] = a
            else:
                out[j, self._maps[j]] = a
        for j in range(nv - 1):
            if np.any(out[j] > out[j + 1]):
                raise InvalidCouplingError(f"initial configuration {j} is not below {j + 1}")
        return out

    def run(
        self,
        init: np.ndarray,
        T: float,
        seed: int,
        trial: int = 0,
        window: float | None = None,
        observe: Sequence[float] | None = None,
        log: bool = False,
        visited: bool = False,
        check_domination: bool = False,
        tag: int = TAG_TRIALS,
    ):
        if not T >= 0:
            raise InvalidParameterError("horizon T must be >= 0")
        W = T / 10 if window is None else float(window)
        obs = _observation_times(T, observe)
        gen = stream(seed, tag, trial)
        mp = -1 if self.caps.max_progeny is None else int(self.caps.max_progeny)
        return _engine.run_trial(
            gen, self.indptr, self.targets, self.cumprob, self.zeta, self.ratio,
            self.ctab, self.ctail, self.c0, init, float(T), float(T - W), self.origin,
            int(self.caps.max_population), mp, obs, check_domination, log, visited,
        ), obs

    def observables(self, raw, obs, j: int = 0, logged: bool = False) -> TrajectoryObservables:
        (counts, events, hit, ext, mx, expl, trunc, probe, vis, prog, _viol,
         lt, lv, lk, lo) = raw
        final = counts[j] if self._maps[j] is None else counts[j, self._maps[j]]
        vis_j = None
        if vis.shape[1]:
            vis_j = vis[j] if self._maps[j] is None else vis[j, self._maps[j]]
        lg = EventLog(lt.copy(), lv.copy(), lk.copy(), lo.copy()) if logged and j == 0 else None
        return TrajectoryObservables(
            events=int(events),
            observation_times=obs,
            origin_occupancy=probe[j].copy(),
            extinction_time=None if ext[j] < 0 else float(ext[j]),
            max_population=int(mx[j]),
            truncated=bool(trunc[j]),
            exploded=bool(expl[j]),
            window_hit=bool(hit[j]),
            final=ParticleConfiguration.from_array(final, int(prog[j])),
            visited=vis_j,
            log=lg,
        )


def _observation_times(T: float, observe) -> np.ndarray:
    if observe is None:
        obs = np.linspace(0.0, T, 11) if T > 0 else np.array([0.0])
    else:
        obs = np.asarray(observe, dtype=float)
    if obs.ndim != 1 or np.any(np.diff(obs) <= 0):
        raise InvalidParameterError("observation times must be strictly increasing")
    if len(obs) and (obs[0] < 0 or obs[-1] > T):
        raise InvalidParameterError("observation times must lie in [0, T]")
    return np.ascontiguousarray(obs)


def simulate_rbrw(
    graph: FiniteGraph,
    profile: RateProfile,
    init=None,
    T: float = 1.0,
    seed: int = 0,
    caps: Caps = Caps(),
    trial: int = 0,
    observe: Sequence[float] | None = None,
    window: float | None = None,
    log: bool = False,
    visited: bool = False,
    origin=None,
) -> TrajectoryObservables:
    """Exact Gillespie simulation of one trajectory up to time ``T``.

    ``init`` may be a :class:`ParticleConfiguration`, a mapping from vertex
    index or point to count, a dense count array, or None for one particle at
    the origin. The trajectory is a deterministic function of
    ``(seed, trial)``.
    """
    seed = check_seed(seed)
    eng = CoupledEngine(graph, [profile], caps=caps, origin=origin)
    init_arr = eng.host_init([init])
    raw, obs = eng.run(init_arr, T, seed, trial, window, observe, log, visited)
    return eng.observables(raw, obs, logged=log)


def local_survival_trial(
    graph: FiniteGraph,
    profile: RateProfile,
    x0=None,
    T: float = 1.0,
    W: float | None = None,
    seed: int = 0,
    trial: int = 0,
    init=None,
    caps: Caps = Caps(),
) -> bool:
    """True iff ``eta(x0) > 0`` at some time in ``[T - W, T]``; ``W`` defaults to ``T / 10``.

    An exploded run counts as a survival.
    """
    W = T / 10 if W is None else W
    if not T > W > 0:
        raise InvalidParameterError("need T > W > 0")
    x = _vertex(graph, x0)
    if init is None:
        init = {x: 1}
    eng = CoupledEngine(graph, [profile], caps=caps, origin=x)
    raw, _ = eng.run(eng.host_init([init]), T, check_seed(seed), trial, W, observe=())
    return bool(raw[2][0])


def coupled_profile_trials(
    graph: FiniteGraph,
    profiles: Sequence[RateProfile],
    init=None,
    T: float = 1.0,
    seed: int = 0,
    trials: int = 1,
    graphs: Sequence[FiniteGraph] | None = None,
    window: float | None = None,
    observe: Sequence[float] | None = None,
    caps: Caps = Caps(),
    origin=None,
    check_domination: bool = True,
    threads: int = 1,
) -> list[list[TrajectoryObservables]]:
    """Run ``trials`` trials of ordered variants on one shared event stream.

    Returns ``out[trial][j]``. Raises :class:`InvalidCouplingError` when the
    profiles, graphs or initial configurations are not pointwise ordered, and
    an AssertionError if a per-event domination check ever fails.
    """
    seed = check_seed(seed)
    eng = CoupledEngine(graph, profiles, graphs, origin=origin, caps=caps)
    init_arr = eng.host_init(init if isinstance(init, (list, tuple)) else [init] * len(profiles))

    def one(i):
        raw, obs = eng.run(init_arr, T, seed, i, window, observe, check_domination=check_domination)
        if raw[10]:
            raise AssertionError(f"domination violated {raw[10]} times in trial {i}")
        return [eng.observables(raw, obs, j) for j in range(len(profiles))]

    return list(map_trials(one, trials, threads))


def map_trials(fn, trials: int, threads: int = 1):
    """Apply ``fn`` to ``range(trials)`` preserving order; ``threads=0`` uses every core."""
    if trials < 0:
        raise InvalidParameterError("trials must be >= 0")
    if threads == 0:
        import os

        threads = os.cpu_count() or 1
    if threads <= 1 or trials < 2:
        return [fn(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))
