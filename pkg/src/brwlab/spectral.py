"""Convergence parameters of restricted kernels and the expected-occupancy series.

The strong critical parameter of a restricted kernel is the reciprocal of the
Perron root of its matrix; box values decrease to the full-lattice value as
the box grows, so a box always gives an upper bracket for the lattice and
``1 / zeta_full`` gives the lower one.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .errors import BoxTooSmallError, InvalidParameterError, NonConvergenceError, NotApplicableError
from .kernel import FiniteGraph, Kernel, box_graph, delta, kernel_matvec

PERRON_TOL = 1e-10
PERRON_WINDOW = 10
PERRON_CAP = 100_000


@dataclass(frozen=True)
class ConvergenceEstimate:
    """Bracket ``[lower_bound, upper_bound]`` for the lattice strong critical value."""

    lower_bound: float
    upper_bound: float
    gelfand: np.ndarray  # g_n = mu^(n)(x,x)^(1/n) for n = 0..n_max (g_0 unused, nan)
    n_max: int
    iterations: int = 0

    @property
    def gelfand_lower(self) -> float:
        """max_n g_n: a lower bound on 1/lambda_s of the lattice."""
        g = self.gelfand[1:]
        return float(np.nanmax(g)) if len(g) else float("nan")

    @property
    def gelfand_upper_lambda(self) -> float:
        gl = self.gelfand_lower
        return math.inf if gl == 0 else 1.0 / gl

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower_bound + self.upper_bound)


def power_diagonal(graph: FiniteGraph, x: int | None = None, n_max: int = 10) -> np.ndarray:
    """Return ``mu^(n)(x, x)`` for ``n = 0..n_max``."""
    if n_max < 0:
        raise InvalidParameterError("n_max must be >= 0")
    x = graph.origin if x is None else x
    v = delta(graph, x)
    out = np.empty(n_max + 1)
    out[0] = 1.0
    for n in range(1, n_max + 1):
        v = kernel_matvec(graph, v)
        out[n] = v[x]
    return out


def power_row_mass(graph: FiniteGraph, x: int | None = None, n_max: int = 10) -> np.ndarray:
    """Return ``sum_y mu^(n)(x, y)`` for ``n = 0..n_max``."""
    x = graph.origin if x is None else x
    v = delta(graph, x)
    out = np.empty(n_max + 1)
    out[0] = 1.0
    for n in range(1, n_max + 1):
        v = kernel_matvec(graph, v)
        out[n] = v.sum()
    return out


def gelfand_values(diag: np.ndarray) -> np.ndarray:
    g = np.full(len(diag), np.nan)
    n = np.arange(1, len(diag))
    with np.errstate(divide="ignore"):
        g[1:] = np.where(diag[1:] > 0, np.exp(np.log(np.maximum(diag[1:], 1e-300)) / n), 0.0)
    return g


def fekete_violations(diag: np.ndarray, slack: float = 1e-12) -> list[tuple[int, int]]:
    """Pairs ``(n, r)`` with ``g_{nr} < g_n - slack``; a supermultiplicative sequence has none."""
    g = gelfand_values(diag)
    n_max = len(diag) - 1
    bad = []
    for n in range(1, n_max + 1):
        for r in range(2, n_max // n + 1):
            if g[n * r] < g[n] - slack:
                bad.append((n, r))
    return bad


def perron_root(
    graph: FiniteGraph,
    x0: int | None = None,
    tol: float = PERRON_TOL,
    window: int = PERRON_WINDOW,
    cap: int = PERRON_CAP,
) -> tuple[float, int]:
    """Perron root of the restricted kernel matrix by power iteration from ``delta_{x0}``.

    Bipartite graphs (period 2) are iterated with the squared operator. Other
    loop-free graphs may have longer periods, so they are iterated with
    ``M + s I`` (Perron root ``rho + s``), which is aperiodic.
    Returns ``(rho, iterations)``.
    """
    M = graph.matrix
    squared = graph.is_bipartite()
    shift = 0.0
    if squared:
        op = (M @ M).tocsr()
    elif graph.kernel.loop_rate == 0:
        shift = 0.5 * graph.kernel.zeta_full
        op = (M + shift * sp.identity(graph.n_vertices, format="csr")).tocsr()
    else:
        op = M
    opT = op.T.tocsr()
    v = delta(graph, graph.origin if x0 is None else x0)
    history: list[float] = []
    residual = math.inf
    for it in range(1, cap + 1):
        w = opT @ v
        nv = v @ v
        rq = float(v @ w) / float(nv)
        scale = float(np.abs(w).max())
        if scale == 0.0:
            return 0.0, it
        v = w / scale
        history.append(rq)
        if len(history) > window:
            old = history[-1 - window]
            residual = abs(rq - old) / abs(rq) if rq else math.inf
            if residual < tol:
                rho = math.sqrt(rq) if squared else rq - shift
                return max(rho, 0.0), it
    raise NonConvergenceError(f"power iteration did not converge in {cap} iterations", residual)


def lambda_s_graph(graph: FiniteGraph, x0: int | None = None) -> float:
    rho, _ = perron_root(graph, x0)
    return math.inf if rho == 0 else 1.0 / rho


def lambda_s_box(kernel: Kernel, m: int, center=None) -> float:
    """Strong critical value of the kernel restricted to ``center + B(m)``."""
    return lambda_s_graph(box_graph(kernel, center, m))


def lambda_s_bracket(kernel: Kernel, x0=None, m: int = 1, n_max: int = 20) -> ConvergenceEstimate:
    """Bracket ``[1/zeta_full, lambda_s(x0 + B(m))]`` plus Gelfand values on the box."""
    if m < 1 or n_max < 2:
        raise InvalidParameterError("need m >= 1 and n_max >= 2")
    g = box_graph(kernel, x0, m)
    rho, iters = perron_root(g)
    diag = power_diagonal(g, g.origin, n_max)
    return ConvergenceEstimate(
        lower_bound=1.0 / kernel.zeta_full,
        upper_bound=math.inf if rho == 0 else 1.0 / rho,
        gelfand=gelfand_values(diag),
        n_max=n_max,
        iterations=iters,
    )


def lambda_s_sequence(kernel: Kernel, m_list: Sequence[int], n_max: int = 20) -> list[float]:
    """``lambda_s(B(m))`` for each ``m`` in a strictly increasing list."""
    m_list = list(m_list)
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise InvalidParameterError("m_list must be strictly increasing")
    return [lambda_s_box(kernel, m) for m in m_list]


def lambda_w_lower(kernel: Kernel, x0=None, m: int | None = None, n_max: int = 20) -> float:
    """``1 / min_n (sum_y mu^(n)(x0, y))^(1/n)`` over ``n = 1..n_max``.

    The box must be large enough that no mass meets the boundary in
    ``n_max`` steps, so the row masses are those of the full lattice.
    """
    if n_max < 1:
        raise InvalidParameterError("n_max must be >= 1")
    need = n_max * kernel.radius
    if m is None:
        m = need
    if m < need:
        raise BoxTooSmallError(f"box radius {m} < n_max * stencil radius = {need}")
    g = box_graph(kernel, x0, m)
    mass = power_row_mass(g, g.origin, n_max)
    n = np.arange(1, n_max + 1)
    roots = np.exp(np.log(mass[1:]) / n)
    return 1.0 / float(roots.min())


def series_terms_needed(rate_bound: float, t: float, tol: float) -> int:
    """Smallest ``n*`` with ``e^{-t} sum_{n > n*} (rate_bound t)^n / n! < tol``."""
    mu = rate_bound * t
    if mu == 0:
        return 0
    scale = math.exp(mu - t)
    n = max(int(mu), 0)
    while scale * poisson.sf(n, mu) >= tol:
        n += max(1, int(math.sqrt(mu)))
    # back off to the smallest admissible n
    while n > 0 and scale * poisson.sf(n - 1, mu) < tol:
        n -= 1
    return n


def expected_occupancy_vector(graph: FiniteGraph, lam: float, x: int, t: float, tol: float = 1e-10) -> np.ndarray:
    """``E(eta_t(y) | eta_0 = delta_x)`` for every vertex ``y``, absolute error < ``tol``.

    Sums ``e^{-t} sum_n mu^(n)(x, y) (lam t)^n / n!`` up to the Poisson-tail
    truncation point for the dominating rate ``lam * zeta_full``.
    """
    if lam < 0 or t < 0 or tol <= 0:
        raise InvalidParameterError("need lam >= 0, t >= 0, tol > 0")
    n_star = series_terms_needed(lam * graph.kernel.zeta_full, t, tol)
    v = delta(graph, x)
    coef = 1.0
    out = v.copy()
    for n in range(1, n_star + 1):
        v = kernel_matvec(graph, v)
        coef *= lam * t / n
        out += coef * v
    return math.exp(-t) * out


def expected_occupancy(graph: FiniteGraph, lam: float, x: int, y: int, t: float, tol: float = 1e-10) -> float:
    return float(expected_occupancy_vector(graph, lam, x, t, tol)[y])


@dataclass
class SymmetryReport:
    m_list: list[int]
    brackets: list[ConvergenceEstimate]
    lambda_w: float
    gaps: list[float] = field(default_factory=list)
    inside: list[bool] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.inside)


def symmetry_check_lambda_w_eq_s(kernel: Kernel, m_list: Sequence[int], n_max: int = 20) -> SymmetryReport:
    """Compare the weak lower bound with the strong bracket for a symmetric kernel."""
    if not kernel.is_symmetric(atol=1e-15):
        raise NotApplicableError("kernel is not symmetric")
    lw = lambda_w_lower(kernel, None, n_max * kernel.radius, n_max)
    rep = SymmetryReport(list(m_list), [], lw)
    slack = 1e-12
    for m in m_list:
        b = lambda_s_bracket(kernel, None, m, n_max)
        rep.brackets.append(b)
        rep.gaps.append(abs(b.midpoint - lw))
        rep.inside.append(b.lower_bound - slack <= lw <= b.upper_bound + slack)
    return rep


SPECTRAL_COLUMNS = ["m", "lambda_s_box", "gelfand_lower", "lambda_w_lower", "n_max"]


def spectral_rows(kernel: Kernel, m_list: Sequence[int], n_max: int) -> list[dict]:
    lw = lambda_w_lower(kernel, None, n_max * kernel.radius, n_max)
    rows = []
    for m, lam in zip(m_list, lambda_s_sequence(kernel, m_list, n_max)):
        g = box_graph(kernel, None, m)
        gel = gelfand_values(power_diagonal(g, g.origin, n_max))
        rows.append({
            "m": m,
            "lambda_s_box": lam,
            "gelfand_lower": float(np.nanmax(gel[1:])),
            "lambda_w_lower": lw,
            "n_max": n_max,
        })
    return rows


def write_spectral_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SPECTRAL_COLUMNS, lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
