from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from brwlab.errors import BoxTooSmallError, InvalidParameterError, NonConvergenceError, NotApplicableError
from brwlab.kernel import blz_kernel, box_graph, box_with_paths, lattice_path, make_stencil_kernel, restrict
from brwlab.spectral import (
    expected_occupancy,
    expected_occupancy_vector,
    fekete_violations,
    gelfand_values,
    lambda_s_box,
    lambda_s_bracket,
    lambda_s_graph,
    lambda_s_sequence,
    lambda_w_lower,
    perron_root,
    power_diagonal,
    series_terms_needed,
    spectral_rows,
    symmetry_check_lambda_w_eq_s,
    write_spectral_csv,
)
from test_kernel import stencils

BLZ1 = blz_kernel(1, 0.5, 0.5)
NN1 = make_stencil_kernel(1, {1: 0.5, -1: 0.5})


def dense_lambda_s(graph) -> float:
    return 1.0 / max(abs(np.linalg.eigvals(graph.matrix.toarray())))


def test_power_diagonal_examples():
    loop = box_graph(make_stencil_kernel(1, {0: 0.5}), None, 0)
    assert np.allclose(power_diagonal(loop, 0, 4), [1, 0.5, 0.25, 0.125, 0.0625])
    two = restrict(make_stencil_kernel(1, {1: 1.0, -1: 1.0}), [0, 1])
    assert np.array_equal(power_diagonal(two, 0, 5), [1, 0, 1, 0, 1, 0])
    g = box_graph(BLZ1, None, 10)
    assert power_diagonal(g, g.origin, 2)[2] == pytest.approx(0.375)


def test_tridiagonal_exact():
    for m in (5, 10, 50):
        exact = 1.0 / math.cos(math.pi / (2 * m + 2))
        assert lambda_s_box(NN1, m) == pytest.approx(exact, rel=1e-8)
    assert lambda_s_box(NN1, 50) == pytest.approx(1.0004745053351605, rel=1e-8)


def test_single_vertex_bracket_collapses():
    k = make_stencil_kernel(2, {(0, 0): 0.8})
    b = lambda_s_bracket(k, None, 3, 10)
    assert b.lower_bound == pytest.approx(1.25) and b.upper_bound == pytest.approx(1.25)
    assert b.gelfand_lower == pytest.approx(0.8)
    assert lambda_s_sequence(k, [1, 2, 4]) == pytest.approx([1.25] * 3)


def test_blz_bracket_contains_limit():
    for d, m_big in ((1, 40), (2, 12)):
        k = blz_kernel(d, 0.5, 0.5)
        for m in (1, 2, 4, m_big):
            b = lambda_s_bracket(k, None, m, 20)
            assert b.lower_bound <= 1.0 <= b.upper_bound
            assert 1.0 / b.gelfand_lower >= 1.0 - 1e-12
        assert b.upper_bound - 1.0 <= 0.02


def test_sequence_matches_dense_oracle():
    seq = lambda_s_sequence(BLZ1, [1, 2, 4, 8, 16])
    dense = [dense_lambda_s(box_graph(BLZ1, None, m)) for m in (1, 2, 4, 8, 16)]
    assert seq == pytest.approx(dense, rel=1e-9)
    assert all(b < a for a, b in zip(seq, seq[1:]))
    assert all(v > 1.0 for v in seq)
    assert len(lambda_s_sequence(BLZ1, [3])) == 1
    with pytest.raises(InvalidParameterError):
        lambda_s_sequence(BLZ1, [2, 2])


def test_bracket_preconditions():
    with pytest.raises(InvalidParameterError):
        lambda_s_bracket(BLZ1, None, 0, 10)
    with pytest.raises(InvalidParameterError):
        lambda_s_bracket(BLZ1, None, 2, 1)


def test_nonconvergence_carries_residual():
    with pytest.raises(NonConvergenceError) as ei:
        perron_root(box_graph(BLZ1, None, 30), cap=3)
    assert ei.value.residual >= 0


def test_bipartite_uses_squared_operator():
    g = box_graph(NN1, None, 4)
    assert g.is_bipartite()
    assert lambda_s_graph(g) == pytest.approx(dense_lambda_s(g), rel=1e-9)


def test_lambda_w_lower_examples():
    assert lambda_w_lower(blz_kernel(2, 0.3, 0.4), None, None, 10) == pytest.approx(1 / 0.7)
    assert lambda_w_lower(make_stencil_kernel(1, {0: 0.25}), None, None, 5) == pytest.approx(4.0)
    k = make_stencil_kernel(1, {1: 0.9, -1: 0.1, 0: 0.2})
    assert lambda_w_lower(k, None, None, 1) == pytest.approx(1 / 1.2)
    with pytest.raises(BoxTooSmallError):
        lambda_w_lower(BLZ1, None, 3, 10)


def test_series_examples():
    g = box_graph(BLZ1, None, 3)
    x = g.origin
    assert np.allclose(expected_occupancy_vector(g, 1.3, x, 0.0), np.eye(g.n_vertices)[x])
    v = expected_occupancy_vector(g, 0.0, x, 2.0)
    assert v[x] == pytest.approx(math.exp(-2)) and np.count_nonzero(v) == 1
    loop = box_graph(make_stencil_kernel(1, {0: 1.0}), None, 0)
    assert expected_occupancy(loop, 2.0, 0, 0, 1.0, 1e-10) == pytest.approx(math.e, abs=1e-10)


def test_series_terms_tail_bound():
    from scipy.stats import poisson

    for rate, t, tol in ((1.0, 1.0, 1e-10), (2.5, 4.0, 1e-8), (0.3, 10.0, 1e-12)):
        n = series_terms_needed(rate, t, tol)
        mu = rate * t
        assert math.exp(mu - t) * poisson.sf(n, mu) < tol
        if n > 0:
            assert math.exp(mu - t) * poisson.sf(n - 1, mu) >= tol


@settings(max_examples=25, deadline=None)
@given(stencils(), st.integers(0, 2), st.floats(0, 2), st.floats(0, 3))
def test_series_matches_expm(k, m, lam, t):
    g = box_graph(k, None, m)
    tol = 1e-10
    oracle = scipy.linalg.expm(t * (lam * g.matrix.toarray() - np.eye(g.n_vertices)))[g.origin]
    got = expected_occupancy_vector(g, lam, g.origin, t, tol)
    assert np.all(np.abs(got - oracle) <= 2 * tol + 1e-12 * np.abs(oracle))


@settings(max_examples=25, deadline=None)
@given(stencils(), st.integers(1, 3))
def test_fekete_on_boxes(k, m):
    g = box_graph(k, None, m)
    diag = power_diagonal(g, g.origin, 24)
    assert fekete_violations(diag, 1e-12) == []
    gel = gelfand_values(diag)
    # every Gelfand value lower-bounds the spectral radius
    rho = max(abs(np.linalg.eigvals(g.matrix.toarray())))
    assert np.nanmax(gel[1:]) <= rho * (1 + 1e-9)


@settings(max_examples=10, deadline=None)
@given(stencils(symmetric=True))
def test_box_values_nonincreasing(k):
    seq = lambda_s_sequence(k, [1, 2, 4, 8])
    assert all(b <= a * (1 + 1e-10) for a, b in zip(seq, seq[1:]))
    assert lambda_w_lower(k, None, None, 8) <= seq[-1] * (1 + 1e-10)


def test_symmetry_check():
    rep = symmetry_check_lambda_w_eq_s(BLZ1, [5, 10, 20], 20)
    assert rep.ok
    assert rep.lambda_w == pytest.approx(1.0)
    assert rep.brackets[-1].upper_bound - 1.0 < rep.brackets[0].upper_bound - 1.0
    loop = symmetry_check_lambda_w_eq_s(make_stencil_kernel(1, {0: 0.5}), [1, 2], 5)
    assert loop.lambda_w == pytest.approx(2.0) and all(b.midpoint == pytest.approx(2.0) for b in loop.brackets)
    with pytest.raises(NotApplicableError):
        symmetry_check_lambda_w_eq_s(make_stencil_kernel(1, {1: 0.9, -1: 0.1}), [2], 5)


def test_path_graph_perron_below_box_value():
    k = blz_kernel(2, 0.5, 0.5)
    g = box_with_paths(k, (0, 0), 2, [lattice_path((0, 0), [(1, 0)] * 6)])
    box = box_graph(k, None, 2)
    assert lambda_s_graph(g) <= lambda_s_graph(box) + 1e-12


def test_spectral_csv(tmp_path):
    rows = spectral_rows(BLZ1, [1, 2, 3], 10)
    path = tmp_path / "s.csv"
    write_spectral_csv(path, rows)
    text = path.read_bytes().decode()
    assert text.startswith("m,lambda_s_box,gelfand_lower,lambda_w_lower,n_max\r\n")
    assert len(text.strip().split("\r\n")) == 4
