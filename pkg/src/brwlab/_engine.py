"""Compiled event loop shared by every particle simulation.

One call simulates one trial of ``n_var`` coupled variants on a common host
graph. Variant ``top`` (the last one still active) drives the event stream.
Each particle of the driving variant is identified by its slot ``i`` at its
vertex; a death or proposal of slot ``i`` at ``x`` acts in variant ``j``
exactly when ``i < eta_j(x)``. A proposal along host edge ``e`` into ``y`` is
accepted in variant ``j`` iff ``U * c0 < ratio[j, e] * c_j(eta_j(y))``.
Each variant is then an exact restrained BRW, and pointwise-ordered
variants stay pointwise ordered along the whole trajectory.
"""

from __future__ import annotations

import numba as nb
import numpy as np

DEATH = 0
BIRTH = 1
REJECT = 2


@nb.njit(cache=True, nogil=True)
def _tree_add(tree, i, delta):
    n = len(tree) - 1
    i += 1
    while i <= n:
        tree[i] += delta
        i += i & (-i)


@nb.njit(cache=True, nogil=True)
def _tree_find(tree, target, top_bit):
    # smallest index whose prefix sum exceeds target
    n = len(tree) - 1
    pos = 0
    step = top_bit
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        step >>= 1
    return pos


@nb.njit(cache=True, nogil=True)
def _tree_build(tree, weights):
    n = len(weights)
    tree[:] = 0.0
    for i in range(n):
        tree[i + 1] += weights[i]
        j = (i + 1) + ((i + 1) & (-(i + 1)))
        if j <= n:
            tree[j] += tree[i + 1]


@nb.njit(cache=True, nogil=True)
def _c(ctab, ctail, j, occ):
    if occ < ctab.shape[1]:
        return ctab[j, occ]
    return ctail[j]


@nb.njit(cache=True, nogil=True)
def run_trial(
    gen,
    indptr,
    targets,
    cumprob,
    zeta,
    ratio,
    ctab,
    ctail,
    c0,
    init,
    horizon,
    window_start,
    origin,
    max_pop,
    max_progeny,
    probe_times,
    check_domination,
    want_log,
    want_visited,
):
    n_var, V = init.shape
    counts = init.copy()
    pop = np.zeros(n_var, dtype=np.int64)
    for j in range(n_var):
        for x in range(V):
            pop[j] += counts[j, x]
    progeny = pop.copy()
    max_seen = pop.copy()
    extinct_at = np.full(n_var, -1.0)
    exploded = np.zeros(n_var, dtype=np.bool_)
    truncated = np.zeros(n_var, dtype=np.bool_)
    hit = np.zeros(n_var, dtype=np.bool_)
    n_probe = len(probe_times)
    probe_occ = np.zeros((n_var, n_probe), dtype=np.int64)
    visited = np.zeros((n_var, V if want_visited else 0), dtype=np.bool_)
    if want_visited:
        for j in range(n_var):
            for x in range(V):
                if counts[j, x] > 0:
                    visited[j, x] = True
    log_cap = 1024 if want_log else 0
    log_t = np.empty(log_cap)
    log_v = np.empty(log_cap, dtype=np.int64)
    log_k = np.empty(log_cap, dtype=np.int64)
    log_o = np.empty(log_cap, dtype=np.int64)
    n_log = 0
    violations = 0

    for j in range(n_var):
        if pop[j] == 0:
            extinct_at[j] = 0.0

    top = n_var - 1
    # a driver above the cap hands over to the next variant down
    while top >= 0 and pop[top] > max_pop:
        exploded[top] = True
        hit[top] = True
        top -= 1

    tree = np.zeros(V + 1)
    weights = np.zeros(V)
    vrate = 1.0 + c0 * zeta
    top_bit = 1
    while top_bit * 2 <= V:
        top_bit *= 2
    if top >= 0:
        for x in range(V):
            weights[x] = counts[top, x] * vrate[x]
        _tree_build(tree, weights)

    t = 0.0
    k_probe = 0
    window_checked = False
    events = 0
    total = 0.0
    for x in range(V):
        total += weights[x]
    while top >= 0 and pop[top] > 0:
        if events % 1024 == 0:
            # clear accumulated rounding drift in the running total
            total = 0.0
            for x in range(V):
                total += weights[x]
        t_new = t + gen.exponential() / total
        while k_probe < n_probe and probe_times[k_probe] < t_new:
            if probe_times[k_probe] <= horizon:
                for j in range(n_var):
                    probe_occ[j, k_probe] = counts[j, origin]
            k_probe += 1
        if not window_checked and t_new > window_start:
            window_checked = True
            for j in range(n_var):
                if counts[j, origin] > 0:
                    hit[j] = True
        if t_new > horizon:
            t = horizon
            break
        t = t_new
        events += 1

        x = _tree_find(tree, gen.random() * total, top_bit)
        while x >= V or counts[top, x] == 0:
            # rounding put the target outside the populated mass
            _tree_build(tree, weights)
            total = 0.0
            for xx in range(V):
                total += weights[xx]
            x = _tree_find(tree, gen.random() * total, top_bit)
        slot = int(gen.random() * counts[top, x])
        in0 = slot < counts[0, x]
        kind = DEATH
        if gen.random() * vrate[x] < 1.0:
            for j in range(top + 1):
                if slot < counts[j, x]:
                    counts[j, x] -= 1
                    pop[j] -= 1
                    if pop[j] == 0 and extinct_at[j] < 0:
                        extinct_at[j] = t
            y = x
        else:
            u = gen.random()
            e = indptr[x + 1] - 1
            for ee in range(indptr[x], indptr[x + 1]):
                if u < cumprob[ee]:
                    e = ee
                    break
            y = targets[e]
            thr = gen.random() * c0
            kind = REJECT
            for j in range(top + 1):
                if slot < counts[j, x] and thr < ratio[j, e] * _c(ctab, ctail, j, counts[j, y]):
                    if max_progeny >= 0 and progeny[j] >= max_progeny:
                        truncated[j] = True
                        continue
                    counts[j, y] += 1
                    pop[j] += 1
                    progeny[j] += 1
                    if pop[j] > max_seen[j]:
                        max_seen[j] = pop[j]
                    if want_visited:
                        visited[j, y] = True
                    if j == 0:
                        kind = BIRTH
        if want_log and in0:
            if n_log == log_cap:
                log_cap *= 2
                log_t = _grow_f(log_t, log_cap)
                log_v = _grow_i(log_v, log_cap)
                log_k = _grow_i(log_k, log_cap)
                log_o = _grow_i(log_o, log_cap)
            log_t[n_log] = t
            log_v[n_log] = y
            log_k[n_log] = kind
            log_o[n_log] = counts[0, y]
            n_log += 1
        if window_checked:
            for j in range(top + 1):
                if counts[j, origin] > 0:
                    hit[j] = True
        if check_domination:
            for j in range(top):
                if counts[j, x] > counts[j + 1, x] or counts[j, y] > counts[j + 1, y]:
                    violations += 1
        w = counts[top, x] * vrate[x]
        _tree_add(tree, x, w - weights[x])
        total += w - weights[x]
        weights[x] = w
        if y != x:
            w = counts[top, y] * vrate[y]
            _tree_add(tree, y, w - weights[y])
            total += w - weights[y]
            weights[y] = w
        if pop[top] > max_pop:
            while top >= 0 and pop[top] > max_pop:
                exploded[top] = True
                hit[top] = True
                top -= 1
            if top >= 0:
                for xx in range(V):
                    weights[xx] = counts[top, xx] * vrate[xx]
                _tree_build(tree, weights)
                total = 0.0
                for xx in range(V):
                    total += weights[xx]

    if not window_checked and t >= window_start:
        for j in range(n_var):
            if counts[j, origin] > 0:
                hit[j] = True
    while k_probe < n_probe:
        if probe_times[k_probe] <= horizon:
            for j in range(n_var):
                probe_occ[j, k_probe] = counts[j, origin]
        k_probe += 1
    return (
        counts, events, hit, extinct_at, max_seen, exploded, truncated, probe_occ,
        visited, progeny, violations, log_t[:n_log], log_v[:n_log], log_k[:n_log], log_o[:n_log],
    )


@nb.njit(cache=True, nogil=True)
def _grow_f(a, n):
    out = np.empty(n)
    out[: len(a)] = a
    return out


@nb.njit(cache=True, nogil=True)
def _grow_i(a, n):
    out = np.empty(n, dtype=np.int64)
    out[: len(a)] = a
    return out
