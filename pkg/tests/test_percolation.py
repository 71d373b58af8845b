from __future__ import annotations

from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brwlab.errors import InvalidParameterError, NoChainError
from brwlab.kernel import blz_kernel, box_graph
from brwlab.percolation import (
    PercolationSample,
    SeedChain,
    build_seed_chain,
    giant_cluster_graph,
    sample_percolation,
    seed_centers,
    verify_chain,
    write_cluster_csv,
)


def bfs_labels(sample: PercolationSample) -> np.ndarray:
    """Independent labelling: breadth-first search over open bonds."""
    d, side = sample.d, sample.side
    n = sample.n_vertices
    stride = [side ** (d - 1 - i) for i in range(d)]
    coords = sample.coords + sample.L
    lab = np.full(n, -1)
    cur = 0
    for s in range(n):
        if lab[s] >= 0:
            continue
        lab[s] = cur
        q = deque([s])
        while q:
            v = q.popleft()
            for a in range(d):
                if coords[v, a] + 1 < side and sample.open_bonds[v * d + a]:
                    w = v + stride[a]
                    if lab[w] < 0:
                        lab[w] = cur
                        q.append(w)
                if coords[v, a] > 0:
                    w = v - stride[a]
                    if sample.open_bonds[w * d + a] and lab[w] < 0:
                        lab[w] = cur
                        q.append(w)
        cur += 1
    return lab


def same_partition(a, b) -> bool:
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def test_extreme_p():
    full = sample_percolation(2, 5, 1.0, 1)
    assert full.n_clusters == 1 and full.giant_density == 1.0
    empty = sample_percolation(2, 5, 0.0, 1)
    assert empty.n_clusters == empty.n_vertices
    assert empty.giant_density == pytest.approx(1 / empty.n_vertices)


def test_invalid_parameters():
    for p in (-0.1, 1.1):
        with pytest.raises(InvalidParameterError):
            sample_percolation(2, 5, p, 0)
    with pytest.raises(InvalidParameterError):
        sample_percolation(2, 0, 0.5, 0)


def test_reproducible_from_seed():
    a, b = sample_percolation(2, 20, 0.6, 99), sample_percolation(2, 20, 0.6, 99)
    assert np.array_equal(a.open_bonds, b.open_bonds)
    c = sample_percolation(2, 20, 0.6, 100)
    assert not np.array_equal(a.open_bonds, c.open_bonds)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.floats(0, 1), st.integers(0, 2**64 - 1))
def test_labels_match_bfs(d, L, p, seed):
    s = sample_percolation(d, L, p, seed)
    assert same_partition(s.labels, bfs_labels(s))
    sizes = s.cluster_sizes
    assert sizes[s.largest] == sizes.max()
    assert s.largest == int(np.nonzero(sizes == sizes.max())[0].min())


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.integers(1, 8), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32))
def test_monotone_in_p(d, L, p1, p2, seed):
    lo, hi = sorted((p1, p2))
    a, b = sample_percolation(d, L, lo, seed), sample_percolation(d, L, hi, seed)
    assert np.all(~a.open_bonds | b.open_bonds)
    assert a.giant_size <= b.giant_size


def test_binary_roundtrip(tmp_path):
    s = sample_percolation(2, 7, 0.55, 1234)
    path = tmp_path / "s.bin"
    s.save(path)
    t = PercolationSample.load(path)
    assert (t.d, t.L, t.p, t.seed) == (2, 7, 0.55, 1234)
    assert np.array_equal(t.open_bonds, s.open_bonds)
    assert np.array_equal(t.labels, s.labels)
    # header: magic, d, L, p as IEEE-754, seed; bits follow in bond-id order
    raw = path.read_bytes()
    assert raw[:4] == b"BRWP" and len(raw) == 4 + 4 + 4 + 8 + 8 + (15 * 15 * 2 + 7) // 8


def test_cluster_csv(tmp_path):
    path = tmp_path / "c.csv"
    write_cluster_csv(path, [sample_percolation(2, 5, p, 1) for p in (0.3, 0.7)])
    lines = path.read_bytes().split(b"\r\n")
    assert lines[0].startswith(b"d,L,p,seed")
    assert len([x for x in lines if x]) == 3


def test_giant_density_stable_across_seeds():
    dens = [sample_percolation(2, 200, 0.6, s).giant_density for s in range(10)]
    assert max(dens) - min(dens) <= 0.02
    assert all(abs(x - np.mean(dens)) <= 0.01 for x in dens)


def test_giant_cluster_graph_full_and_empty():
    k = blz_kernel(2, 0.5, 0.5)
    full = giant_cluster_graph(sample_percolation(2, 4, 1.0, 0), k)
    box = box_graph(k, None, 4)
    assert np.array_equal(full.coords, box.coords)
    assert np.array_equal(full.targets, box.targets)
    assert full.origin_point == (0, 0)
    empty = giant_cluster_graph(sample_percolation(2, 4, 0.0, 0), k)
    assert empty.n_vertices == 1 and empty.zeta[0] == pytest.approx(0.5)
    assert empty.notes and "degenerate" in empty.notes[0]


def test_giant_cluster_edges_exhaustive():
    s = sample_percolation(2, 100, 0.6, 5)
    g = giant_cluster_graph(s, blz_kernel(2, 0.5, 0.5))
    labels = s.labels
    for e in range(g.n_edges):
        x, y = g.point(g.sources[e]), g.point(g.targets[e])
        assert labels[s.vertex_index(x)] == s.largest
        assert labels[s.vertex_index(y)] == s.largest
        if x != y:
            assert s.is_open(x, y)
    assert g.n_vertices == s.giant_size
    origin_d2 = (np.asarray(g.origin_point) ** 2).sum()
    assert origin_d2 == (g.coords**2).sum(axis=1).min()


def test_seed_chain_full_lattice():
    s = sample_percolation(2, 20, 1.0, 0)
    ch = build_seed_chain(s, 1)
    assert len(ch) >= 2
    for a, b, path in zip(ch.centers, ch.centers[1:], ch.paths):
        assert np.array_equal(np.subtract(b, a), (3, 0))
        assert len(path) - 1 == 3 <= ch.M
    assert verify_chain(s, ch)


def test_seed_chain_p0():
    with pytest.raises(NoChainError):
        build_seed_chain(sample_percolation(2, 20, 0.0, 0), 1)


def test_seed_chain_p06():
    s = sample_percolation(2, 150, 0.6, 2024)
    ch = build_seed_chain(s, 1, M=50)
    assert len(ch) >= 10
    assert verify_chain(s, ch)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.55, 1.0), st.integers(0, 2**32), st.integers(0, 2))
def test_built_chains_always_verify(p, seed, m):
    s = sample_percolation(2, 30, p, seed)
    try:
        ch = build_seed_chain(s, m)
    except NoChainError:
        return
    assert verify_chain(s, ch)


def test_verify_chain_planted_violations():
    s = sample_percolation(2, 60, 0.7, 8)
    ch = build_seed_chain(s, 1)
    assert verify_chain(s, ch)
    a, b = ch.paths[0][0], ch.paths[0][1]
    broken = s.with_bond(a, b, False)
    res = verify_chain(broken, ch)
    assert not res
    # either a seed box bond or the path bond itself gets reported
    assert res.detail and (tuple(a) in res.detail or tuple(b) in res.detail)
    overlap = SeedChain(1, ch.M, (ch.centers[0], ch.centers[0]), ((ch.centers[0],),))
    res = verify_chain(s, overlap)
    assert not res and res.violation == "overlapping seed boxes" and res.detail == (0, 1)


def test_seed_centres_are_open_boxes():
    s = sample_percolation(2, 30, 0.8, 3)
    for c in seed_centers(s, 1)[:50]:
        x = s.coords[c]
        for dx in (-1, 0):
            for dy in (-1, 0, 1):
                assert s.is_open(x + (dx, dy), x + (dx + 1, dy))
                assert s.is_open(x + (dy, dx), x + (dy, dx + 1))
