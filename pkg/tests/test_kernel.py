from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brwlab.errors import InvalidKernelError, InvalidPathError, InvalidRateError, InvalidSubgraphError
from brwlab.kernel import (
    FiniteGraph,
    Kernel,
    blz_kernel,
    box_graph,
    box_with_paths,
    delta,
    kernel_matvec,
    lattice_path,
    make_stencil_kernel,
    restrict,
)
from brwlab.spectral import power_diagonal, power_row_mass


@st.composite
def stencils(draw, d=None, symmetric=False):
    d = draw(st.integers(1, 2)) if d is None else d
    offs = st.tuples(*[st.integers(-2, 2)] * d)
    entries = draw(st.dictionaries(offs, st.floats(0.01, 1.0), min_size=1, max_size=5))
    if symmetric:
        for o, r in list(entries.items()):
            entries[tuple(-v for v in o)] = r
    return make_stencil_kernel(d, entries)


def test_blz_stencil_zeta():
    k = make_stencil_kernel(1, {0: 0.5, 1: 0.25, -1: 0.25})
    assert k.zeta_full == pytest.approx(1.0)
    assert k.loop_rate == 0.5
    assert k == blz_kernel(1, 0.5, 0.5)
    assert k.K >= k.zeta_full


def test_kernel_errors():
    with pytest.raises(InvalidKernelError):
        make_stencil_kernel(2, {})
    with pytest.raises(InvalidKernelError):
        make_stencil_kernel(1, {1: 0.0})
    with pytest.raises(InvalidRateError):
        make_stencil_kernel(1, {1: -1.0})


def test_kernel_json_roundtrip():
    k = blz_kernel(2, 0.3, 0.7)
    assert Kernel.from_json(k.to_json()) == k
    obj = k.to_dict()
    assert set(obj) == {"d", "entries"}
    assert all(set(e) == {"offset", "rate"} for e in obj["entries"])


def test_box_graph_examples():
    k = blz_kernel(1, 0.5, 0.5)
    g0 = box_graph(k, None, 0)
    assert g0.n_vertices == 1 and g0.zeta[0] == pytest.approx(0.5)
    g1 = box_graph(k, None, 1)
    assert g1.n_vertices == 3
    assert g1.zeta[g1.index(0)] == pytest.approx(1.0)
    assert g1.zeta[g1.index(-1)] == pytest.approx(0.75)
    assert g1.zeta[g1.index(1)] == pytest.approx(0.75)
    g2 = box_graph(blz_kernel(2, 0.5, 0.5), None, 2)
    assert g2.n_vertices == 25
    interior = [i for i, c in enumerate(g2.coords) if np.abs(c).max() < 2]
    assert np.allclose(g2.zeta[interior], 1.0)


def test_box_graph_centre_and_order():
    g = box_graph(blz_kernel(2, 0.5, 0.5), (3, -1), 1)
    assert g.origin_point == (3, -1)
    # row-major: last axis fastest
    assert g.point(0) == (2, -2) and g.point(1) == (2, -1)


def test_restrict_identity_and_single_vertex():
    k = blz_kernel(2, 0.4, 0.6)
    box = box_graph(k, None, 2)
    same = restrict(k, [tuple(c) for c in box.coords.tolist()], lambda x, y: True)
    assert np.array_equal(same.coords, box.coords)
    assert np.array_equal(same.indptr, box.indptr)
    assert np.array_equal(same.targets, box.targets)
    assert np.allclose(same.rates, box.rates)
    single = restrict(k, [(1, 1)])
    assert single.n_vertices == 1 and single.zeta[0] == pytest.approx(0.4)
    with pytest.raises(InvalidSubgraphError):
        restrict(k, [])


def test_box_with_paths_zeta_along_path():
    k = blz_kernel(2, 0.5, 0.5)
    gamma = lattice_path((0, 0), [(1, 0)] * 3 + [(0, 1)] * 3)
    g = box_with_paths(k, (0, 0), 1, [gamma])
    nb = 0.5 / 4
    # enumerate retained offsets for each path vertex outside the box
    for j, p in enumerate(gamma):
        if max(abs(v) for v in p) <= 1:
            continue
        expected = 0.5 + nb * (1 + (j + 1 < len(gamma)))
        assert g.zeta[g.index(p)] == pytest.approx(expected)
    with pytest.raises(InvalidPathError):
        box_with_paths(k, (0, 0), 1, [lattice_path((1, 0), [(1, 0)])])
    with pytest.raises(InvalidPathError):
        box_with_paths(k, (0, 0), 1, [[(0, 0), (2, 0)]])


def test_kernel_matvec_examples():
    loop = make_stencil_kernel(1, {0: 0.7})
    g = box_graph(loop, None, 0)
    v = delta(g)
    assert np.array_equal(v, [1.0])
    for n in range(1, 6):
        v = kernel_matvec(g, v)
        assert v[0] == pytest.approx(0.7**n)
    two = restrict(make_stencil_kernel(1, {1: 1.0, -1: 1.0}), [0, 1])
    d1 = kernel_matvec(two, delta(two, 0))
    d2 = kernel_matvec(two, d1)
    assert d1[0] == 0.0 and d2[0] == 1.0


def test_kernel_matvec_mapping_and_errors():
    g = box_graph(blz_kernel(1, 0.5, 0.5), None, 2)
    out = kernel_matvec(g, {(0,): 1.0})
    assert out == {(-1,): 0.25, (0,): 0.5, (1,): 0.25}
    with pytest.raises(IndexError):
        kernel_matvec(g, {(5,): 1.0})
    with pytest.raises(IndexError):
        kernel_matvec(g, np.ones(3))


def test_graph_serialization_roundtrip():
    k = blz_kernel(2, 0.5, 0.5)
    g = box_with_paths(k, (0, 0), 1, [lattice_path((0, 0), [(1, 0)] * 3)])
    h = FiniteGraph.from_dict(g.to_dict())
    assert h.fingerprint() == g.fingerprint()


def test_graph_is_immutable():
    g = box_graph(blz_kernel(1, 0.5, 0.5), None, 2)
    with pytest.raises(ValueError):
        g.rates[0] = 3.0


@settings(max_examples=40, deadline=None)
@given(stencils(), st.integers(0, 3), st.integers(0, 6), st.integers(0, 6))
def test_supermultiplicativity(k, m, a, b):
    g = box_graph(k, None, m)
    diag = power_diagonal(g, g.origin, a + b)
    assert diag[a + b] >= diag[a] * diag[b] * (1 - 1e-12) - 1e-300


@settings(max_examples=30, deadline=None)
@given(stencils(), st.integers(0, 3))
def test_restriction_monotone(k, m):
    small, big = box_graph(k, None, m), box_graph(k, None, m + 1)
    # pointwise: every retained edge of the small box sits in the big box at the same rate
    for i in range(small.n_vertices):
        x = small.point(i)
        for e in range(small.indptr[i], small.indptr[i + 1]):
            y = small.point(small.targets[e])
            assert small.rates[e] == big.rate(x, y) == k.rate(tuple(b - a for a, b in zip(x, y)))
    ds = power_diagonal(small, small.origin, 10)
    db = power_diagonal(big, big.index(small.origin_point), 10)
    assert np.all(ds <= db * (1 + 1e-12))


@settings(max_examples=30, deadline=None)
@given(stencils(), st.integers(0, 3))
def test_row_sum_bound(k, m):
    g = box_graph(k, None, m)
    assert np.all(g.zeta <= k.zeta_full * (1 + 1e-12))
    mass = power_row_mass(g, g.origin, 8)
    n = np.arange(9)
    assert np.all(mass <= k.zeta_full**n * (1 + 1e-12))


@settings(max_examples=30, deadline=None)
@given(stencils())
def test_translation_invariance_interior(k):
    m = k.radius + 2
    g = box_graph(k, None, m)
    for i, c in enumerate(g.coords):
        if np.abs(c).max() > m - k.radius:
            continue
        x = tuple(c.tolist())
        for o, r in k.entries:
            y = tuple(a + b for a, b in zip(x, o))
            assert g.rate(x, y) == r
        assert g.zeta[i] == pytest.approx(k.zeta_full)
