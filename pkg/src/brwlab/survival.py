"""Monte Carlo survival estimates, critical-value bisection and block experiments."""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from .dynamics import Caps, CoupledEngine, RateProfile, map_trials
from .errors import BadBracketError, InvalidParameterError
from .kernel import FiniteGraph, Kernel, box_with_paths
from .rng import TAG_ORIENTED, check_seed, derive_seed, stream

Z95 = 1.959963984540054
THETA = 0.05
MAX_DOUBLINGS = 8


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    den = 1 + z * z / trials
    mid = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    lo, hi = max(0.0, mid - half), min(1.0, mid + half)
    # the score interval contains p up to rounding; make it exact
    return min(lo, p), max(hi, p)


def fingerprint(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SurvivalEstimate:
    trials: int
    successes: int
    fingerprint: str = ""

    def __post_init__(self):
        if self.trials < 0 or not 0 <= self.successes <= max(self.trials, 0):
            raise InvalidParameterError("need 0 <= successes <= trials")

    @property
    def point(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.trials)

    @property
    def lo(self) -> float:
        return self.interval[0]

    @property
    def hi(self) -> float:
        return self.interval[1]

    def to_dict(self) -> dict:
        return {"trials": self.trials, "successes": self.successes, "point": self.point,
                "lo": self.lo, "hi": self.hi, "fingerprint": self.fingerprint}


def _fp_config(graph: FiniteGraph, profile: RateProfile, **kw) -> str:
    return fingerprint({"graph": graph.fingerprint(), "profile": profile.to_dict(), **kw})


def survival_indicators(
    graph: FiniteGraph,
    profile: RateProfile,
    x0=None,
    T: float = 1.0,
    W: float | None = None,
    trials: range | int = 1,
    seed: int = 0,
    init=None,
    caps: Caps = Caps(),
    threads: int = 1,
) -> np.ndarray:
    """Per-trial local-survival indicators for trial indices ``trials``."""
    W = T / 10 if W is None else W
    if not T > W > 0:
        raise InvalidParameterError("need T > W > 0")
    seed = check_seed(seed)
    eng = CoupledEngine(graph, [profile], origin=x0, caps=caps)
    init_arr = eng.host_init([init if init is not None else {eng.origin: 1}])
    idx = range(trials) if isinstance(trials, int) else trials

    def one(i):
        raw, _ = eng.run(init_arr, T, seed, idx[i], W, observe=())
        return bool(raw[2][0])

    return np.array(map_trials(one, len(idx), threads), dtype=bool)


def survival_probability(
    graph: FiniteGraph,
    profile: RateProfile,
    x0=None,
    T: float = 1.0,
    W: float | None = None,
    trials: int = 100,
    seed: int = 0,
    init=None,
    caps: Caps = Caps(),
    threads: int = 1,
) -> SurvivalEstimate:
    """Fraction of trials in which ``x0`` is occupied during ``[T - W, T]``."""
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    ind = survival_indicators(graph, profile, x0, T, W, trials, seed, init, caps, threads)
    fp = _fp_config(graph, profile, x0=str(x0), T=T, W=W, seed=seed, init=str(init),
                    max_population=caps.max_population)
    return SurvivalEstimate(trials, int(ind.sum()), fp)


@dataclass
class CriticalEstimate:
    lam_lo: float
    lam_hi: float
    theta: float
    probes: list[tuple[float, SurvivalEstimate]] = field(default_factory=list)
    trials: int = 0
    inconclusive: bool = False

    @property
    def interval(self) -> tuple[float, float]:
        return self.lam_lo, self.lam_hi

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lam_lo + self.lam_hi)

    def to_dict(self) -> dict:
        return {
            "lam_lo": self.lam_lo, "lam_hi": self.lam_hi, "theta": self.theta,
            "trials": self.trials, "inconclusive": self.inconclusive,
            "probes": [{"lam": lam, **est.to_dict()} for lam, est in self.probes],
        }


# counts(lam, start, stop) -> number of successes among trial indices start..stop-1
SuccessCounter = Callable[[float, int, int], int]


def _decide(counter: SuccessCounter, lam: float, trials: int, theta: float, max_doublings: int):
    """Return (side, estimate, conclusive); side is +1 above theta, -1 below."""
    n = trials
    s = counter(lam, 0, n)
    for _ in range(max_doublings + 1):
        est = SurvivalEstimate(n, s)
        if est.hi < theta:
            return -1, est, True
        if est.lo > theta:
            return 1, est, True
        if _ == max_doublings:
            break
        # common random numbers: the doubled sample reuses the first n trials
        s += counter(lam, n, 2 * n)
        n *= 2
    side = 1 if est.point > theta else -1
    return side, est, False


def bisect_level(
    counter: SuccessCounter,
    lam_range: tuple[float, float],
    tol: float,
    theta: float = THETA,
    trials: int = 100,
    max_doublings: int = MAX_DOUBLINGS,
) -> CriticalEstimate:
    """Bisection for the level ``theta`` of a nondecreasing survival curve."""
    lo, hi = map(float, lam_range)
    if not lo < hi or tol <= 0 or trials < 1:
        raise InvalidParameterError("need lam_lo < lam_hi, tol > 0, trials >= 1")
    out = CriticalEstimate(lo, hi, theta, trials=trials)
    s_lo, e_lo, c_lo = _decide(counter, lo, trials, theta, max_doublings)
    s_hi, e_hi, c_hi = _decide(counter, hi, trials, theta, max_doublings)
    out.probes += [(lo, e_lo), (hi, e_hi)]
    if s_lo > 0 or s_hi < 0:
        raise BadBracketError(
            f"survival at the endpoints does not straddle theta={theta}: "
            f"{e_lo.point:.4f} at {lo}, {e_hi.point:.4f} at {hi}"
        )
    out.inconclusive = not (c_lo and c_hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        side, est, ok = _decide(counter, mid, trials, theta, max_doublings)
        out.probes.append((mid, est))
        out.inconclusive |= not ok
        if side > 0:
            hi = mid
        else:
            lo = mid
    out.lam_lo, out.lam_hi = lo, hi
    return out


def bisect_critical(
    graph: FiniteGraph,
    family: Callable[[float], RateProfile],
    lam_range: tuple[float, float],
    tol: float,
    theta: float = THETA,
    trials: int = 100,
    seed: int = 0,
    T: float = 50.0,
    W: float | None = None,
    x0=None,
    caps: Caps = Caps(),
    max_doublings: int = MAX_DOUBLINGS,
    threads: int = 1,
) -> CriticalEstimate:
    """Estimate the ``lam`` at which local survival probability crosses ``theta``.

    Every probe uses the same trial streams, so the comparison between two
    values of ``lam`` is made on common random numbers.
    """

    def counter(lam, start, stop):
        ind = survival_indicators(graph, family(lam), x0, T, W, range(start, stop), seed,
                                  caps=caps, threads=threads)
        return int(ind.sum())

    return bisect_level(counter, lam_range, tol, theta, trials, max_doublings)


@dataclass
class KSweepResult:
    k_list: list[int]
    estimates: list[SurvivalEstimate]
    brw: SurvivalEstimate
    indicators: np.ndarray  # trials x (len(k_list) + 1), last column is the BRW
    monotone_violations: int

    @property
    def monotone(self) -> bool:
        return self.monotone_violations == 0

    def rows(self) -> list[dict]:
        out = [{"k": k, **e.to_dict()} for k, e in zip(self.k_list, self.estimates)]
        out.append({"k": "inf", **self.brw.to_dict()})
        return out


def k_sweep(
    graph: FiniteGraph,
    lam: float,
    k_list: Sequence[int],
    T: float,
    trials: int,
    seed: int = 0,
    W: float | None = None,
    x0=None,
    caps: Caps = Caps(),
    threads: int = 1,
) -> KSweepResult:
    """Coupled survival of the k-type processes for each ``k`` and of the BRW."""
    k_list = [int(k) for k in k_list]
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise InvalidParameterError("k_list must be strictly increasing")
    W = T / 10 if W is None else W
    if not T > W > 0:
        raise InvalidParameterError("need T > W > 0")
    seed = check_seed(seed)
    profiles = [RateProfile.ktype(lam, k) for k in k_list] + [RateProfile.brw(lam)]
    eng = CoupledEngine(graph, profiles, origin=x0, caps=caps)
    init_arr = eng.host_init([{eng.origin: 1}] * len(profiles))

    def one(i):
        raw, _ = eng.run(init_arr, T, seed, i, W, observe=(), check_domination=True)
        if raw[10]:
            raise AssertionError(f"domination violated in trial {i}")
        return raw[2].copy()

    ind = np.array(map_trials(one, trials, threads), dtype=bool).reshape(trials, len(profiles))
    viol = int(np.sum(ind[:, :-1] & ~ind[:, 1:]))
    fp = fingerprint({"graph": graph.fingerprint(), "lam": lam, "k": k_list, "T": T, "W": W,
                      "seed": seed})
    ests = [SurvivalEstimate(trials, int(ind[:, j].sum()), fp) for j in range(len(profiles))]
    return KSweepResult(k_list, ests[:-1], ests[-1], ind, viol)


def k_sweep_critical(
    graph: FiniteGraph,
    k_list: Sequence[int],
    lam_range: tuple[float, float],
    tol: float,
    theta: float = THETA,
    trials: int = 100,
    seed: int = 0,
    T: float = 50.0,
    W: float | None = None,
    x0=None,
    caps: Caps = Caps(),
    max_doublings: int = MAX_DOUBLINGS,
    threads: int = 1,
) -> list[CriticalEstimate]:
    """``bisect_critical`` for each k-type process on coupled trials.

    Every probe runs all k values in one coupled engine, so at each ``lam``
    the success counts are nondecreasing in k and the returned intervals are
    ordered accordingly. Probes shared between the bisections are cached.
    """
    k_list = [int(k) for k in k_list]
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise InvalidParameterError("k_list must be strictly increasing")
    W = T / 10 if W is None else W
    if not T > W > 0:
        raise InvalidParameterError("need T > W > 0")
    seed = check_seed(seed)
    cache: dict[tuple[float, int, int], np.ndarray] = {}

    def counts(lam, start, stop):
        key = (float(lam), start, stop)
        if key not in cache:
            eng = CoupledEngine(graph, [RateProfile.ktype(lam, k) for k in k_list], origin=x0,
                                caps=Caps(caps.max_population))
            init_arr = eng.host_init([{eng.origin: 1}] * len(k_list))

            def one(i):
                raw, _ = eng.run(init_arr, T, seed, i, W, observe=())
                return raw[2].copy()

            ind = np.array(map_trials(lambda i: one(start + i), stop - start, threads), dtype=bool)
            cache[key] = ind.reshape(stop - start, len(k_list)).sum(axis=0)
        return cache[key]

    return [
        bisect_level(lambda lam, a, b, j=j: int(counts(lam, a, b)[j]), lam_range, tol, theta,
                     trials, max_doublings)
        for j in range(len(k_list))
    ]


def block_event_probability(
    kernel: Kernel,
    x,
    m: int,
    gamma: Sequence,
    gamma_prime: Sequence,
    ell: int,
    lam: float,
    T: float,
    trials: int,
    seed: int = 0,
    caps: Caps = Caps(),
    threads: int = 1,
) -> SurvivalEstimate:
    """P(at least ``ell`` particles at both path ends at time ``T``), from ``ell`` at ``x``.

    The BRW is restricted to the box ``x + B(m)`` and the two paths. A run
    that reaches the population cap counts as a success.
    """
    if ell < 0 or trials < 1:
        raise InvalidParameterError("need ell >= 0 and trials >= 1")
    graph = box_with_paths(kernel, x, m, [gamma, gamma_prime])
    y, y2 = graph.index(gamma[-1]), graph.index(gamma_prime[-1])
    fp = fingerprint({"graph": graph.fingerprint(), "ell": ell, "lam": lam, "T": T,
                      "seed": seed, "max_population": caps.max_population})
    if ell == 0:
        return SurvivalEstimate(trials, trials, fp)
    seed = check_seed(seed)
    eng = CoupledEngine(graph, [RateProfile.brw(lam)], caps=caps)
    init_arr = eng.host_init([{graph.origin: ell}])

    def one(i):
        raw, _ = eng.run(init_arr, T, seed, i, observe=())
        counts, exploded = raw[0][0], raw[5][0]
        return bool(exploded or (counts[y] >= ell and counts[y2] >= ell))

    ok = map_trials(one, trials, threads)
    return SurvivalEstimate(trials, int(sum(ok)), fp)


@dataclass(frozen=True)
class PairLaw:
    """Joint law of the two edges out of one site: (left, right) open states."""

    p11: float
    p10: float
    p01: float
    p00: float

    def __post_init__(self):
        ps = np.array([self.p11, self.p10, self.p01, self.p00])
        if np.any(ps < -1e-15) or abs(ps.sum() - 1) > 1e-12:
            raise InvalidParameterError("pair law must be a probability vector")

    @classmethod
    def joint(cls, eps: float) -> PairLaw:
        """Both edges open together with probability ``1 - eps``."""
        return cls(1 - eps, 0.0, 0.0, eps)

    @classmethod
    def independent(cls, eps: float) -> PairLaw:
        q = 1 - eps
        return cls(q * q, q * eps, eps * q, eps * eps)

    @property
    def epsilon(self) -> float:
        """One minus the smaller edge marginal."""
        return 1 - min(self.p11 + self.p10, self.p11 + self.p01)

    def sample(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c1 = self.p11
        c2 = c1 + self.p10
        c3 = c2 + self.p01
        left = u < c2
        right = (u < c1) | ((u >= c2) & (u < c3))
        return left, right


@dataclass
class OrientedResult:
    estimate: SurvivalEstimate
    mismatches: int
    reached_rows: np.ndarray  # per trial, the last row containing a reached site


def _cone_sites(rows: int, cols: int):
    """Sites (i, n) with i = n mod 2 and |i| <= min(n, cols), n = 0..rows+1."""
    ii, nn = [], []
    for n in range(rows + 2):
        w = min(n, cols)
        i = np.arange(-w, w + 1)
        i = i[(i - n) % 2 == 0]
        ii.append(i)
        nn.append(np.full(len(i), n))
    return np.concatenate(ii), np.concatenate(nn)


def oriented_block_percolation(
    law: PairLaw,
    rows: int,
    cols: int | None = None,
    trials: int = 100,
    seed: int = 0,
) -> OrientedResult:
    """Growth from (0, 0) in oriented percolation with edges (i, n) -> (i +- 1, n + 1).

    The edge pair at each site is drawn from ``law`` and sites are
    independent. A trial survives when some (0, n) with n >= rows is reached.
    Two constructions are compared per realization: reach in the fully
    sampled field (by graph search) and growth that only opens edges out of
    already reached sites, drawing fresh states everywhere else.
    """
    if rows < 1 or trials < 1:
        raise InvalidParameterError("need rows >= 1 and trials >= 1")
    cols = rows + 1 if cols is None else int(cols)
    seed = check_seed(seed)
    si, sn = _cone_sites(rows, cols)
    n_sites = len(si)
    key = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(si, sn))}
    left_t = np.array([key.get((int(a) - 1, int(b) + 1), -1) for a, b in zip(si, sn)])
    right_t = np.array([key.get((int(a) + 1, int(b) + 1), -1) for a, b in zip(si, sn)])
    row_start = np.searchsorted(sn, np.arange(rows + 3))
    goal = np.array([key[(0, n)] for n in (rows, rows + 1) if (0, n) in key])
    other_seed = derive_seed(seed, "unreached")
    successes, mismatches = 0, 0
    last_rows = np.zeros(trials, dtype=np.int64)
    for t in range(trials):
        u = stream(seed, TAG_ORIENTED, t).random(n_sites)
        left, right = law.sample(u)
        # full field: every site's edges, searched from the root
        lk = left & (left_t >= 0)
        rk = right & (right_t >= 0)
        src = np.concatenate([np.nonzero(lk)[0], np.nonzero(rk)[0]])
        dst = np.concatenate([left_t[lk], right_t[rk]])
        adj = csr_matrix((np.ones(len(src), dtype=np.int8), (src, dst)), shape=(n_sites, n_sites))
        order = breadth_first_order(adj, 0, directed=True, return_predecessors=False)
        reach2 = np.zeros(n_sites, dtype=bool)
        reach2[order] = True
        # row-by-row growth; unreached sites get unrelated edge states
        fresh_l, fresh_r = law.sample(stream(other_seed, TAG_ORIENTED, t).random(n_sites))
        reach = np.zeros(n_sites, dtype=bool)
        reach[0] = True
        for n in range(rows + 1):
            a, b = row_start[n], row_start[n + 1]
            r = reach[a:b]
            le = np.where(r, left[a:b], fresh_l[a:b])
            ri = np.where(r, right[a:b], fresh_r[a:b])
            sel = r & le & (left_t[a:b] >= 0)
            reach[left_t[a:b][sel]] = True
            sel = r & ri & (right_t[a:b] >= 0)
            reach[right_t[a:b][sel]] = True
        if not np.array_equal(reach, reach2):
            mismatches += 1
        if len(goal) and reach[goal].any():
            successes += 1
        hit = np.nonzero(reach)[0]
        last_rows[t] = sn[hit].max()
    fp = fingerprint({"law": [law.p11, law.p10, law.p01, law.p00], "rows": rows, "cols": cols,
                      "seed": seed})
    return OrientedResult(SurvivalEstimate(trials, successes, fp), mismatches, last_rows)
