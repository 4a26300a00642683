import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyode.basis import (
    BasisKind,
    InvalidGridError,
    Kind,
    NoBasisMatrixError,
    TimeGrid,
    build_basis_matrix,
    condition_number,
    conditioning_report,
    eval_legendre,
    eval_monomial,
    legendre_values,
)

from oracles import jacobi_cond, legendre_explicit

UNIT = TimeGrid.linspace(0.0, 1.0, 12)

# Jacobi-SVD oracle values (tests/oracles.py), 12 equispaced points on [0, 1], degree 3
COND_MONOMIAL_3_N12 = 102.01130148426127
COND_LEGENDRE_3_N12 = 2.2886029461902213


def test_monomial_examples():
    assert eval_monomial(0, 0.73, UNIT) == 1.0
    assert eval_monomial(1, 1.0, UNIT) == 1.0
    assert eval_monomial(3, 0.5, UNIT) == 0.125


def test_legendre_examples():
    assert eval_legendre(0, 0.31, UNIT) == 1.0
    assert eval_legendre(1, 0.5, UNIT) == 0.0
    assert eval_legendre(2, 1.0, UNIT) == 1.0


def test_normalized_time_on_shifted_interval():
    grid = TimeGrid.linspace(2.0, 6.0, 5)
    assert eval_monomial(2, 4.0, grid) == 0.25
    assert eval_legendre(1, 2.0, grid) == -1.0


def test_index_and_grid_errors():
    with pytest.raises(IndexError):
        eval_monomial(-1, 0.5, UNIT)
    with pytest.raises(InvalidGridError):
        TimeGrid(1.0, 1.0, (1.0, 1.5))
    with pytest.raises(InvalidGridError):
        TimeGrid(0.0, 1.0, (0.0, 0.5, 0.4))
    with pytest.raises(InvalidGridError):
        TimeGrid(0.0, 1.0, (0.1, 0.5))
    # a single point on a degenerate interval is fine
    assert eval_monomial(0, 3.0, TimeGrid(3.0, 3.0, (3.0,))) == 1.0


@pytest.mark.parametrize("n", range(7))
def test_recurrence_matches_explicit_formula(n):
    s = np.linspace(0, 1, 31)
    assert np.allclose(legendre_values(n, s)[n], legendre_explicit(n, 2 * s - 1), atol=1e-13)


def test_basis_matrix_examples():
    g = TimeGrid(0.0, 1.0, (0.0, 1.0))
    assert np.array_equal(build_basis_matrix(BasisKind("monomial", 1), g), [[1, 1], [0, 1]])
    assert np.array_equal(build_basis_matrix(BasisKind("legendre", 1), g), [[1, 1], [-1, 1]])
    A = build_basis_matrix(BasisKind("monomial", 3), UNIT)
    assert A.shape == (4, 12)
    assert A[3][11] == 1.0
    with pytest.raises(NoBasisMatrixError):
        build_basis_matrix(BasisKind("none"), UNIT)


@pytest.mark.parametrize("kind", ["monomial", "legendre"])
def test_first_row_is_ones_and_deterministic(kind):
    A1 = build_basis_matrix(BasisKind(kind, 5), UNIT)
    A2 = build_basis_matrix(BasisKind(kind, 5), UNIT)
    assert np.all(A1[0] == 1.0)
    assert A1.tobytes() == A2.tobytes()


def test_condition_number_examples():
    assert condition_number(np.eye(4)) == 1.0
    km = condition_number(build_basis_matrix(BasisKind("monomial", 3), UNIT).T)
    kl = condition_number(build_basis_matrix(BasisKind("legendre", 3), UNIT).T)
    assert km == pytest.approx(COND_MONOMIAL_3_N12, rel=1e-10)
    assert kl == pytest.approx(COND_LEGENDRE_3_N12, rel=1e-10)
    assert kl < km
    with pytest.raises(ValueError):
        condition_number(np.zeros((0, 3)))
    assert math.isinf(condition_number(np.ones((3, 2))))


def test_report_examples():
    rows = conditioning_report([Kind.MONOMIAL], [0], UNIT)
    assert rows[0].cond2 == pytest.approx(1.0)
    rows = conditioning_report(["legendre"], [1], TimeGrid(0.0, 1.0, (0.0, 1.0)))
    assert rows[0].cond2 == pytest.approx(1.0)
    assert jacobi_cond(np.array([[1.0, -1.0], [1.0, 1.0]])) == pytest.approx(1.0)


def test_report_ratio_grows():
    grid = TimeGrid.linspace(0.0, 1.0, 50)
    rows = conditioning_report(["monomial", "legendre"], range(3, 11), grid)
    km = {r.degree: r.cond2 for r in rows if r.kind == "monomial"}
    kl = {r.degree: r.cond2 for r in rows if r.kind == "legendre"}
    assert km[10] / kl[10] > km[3] / kl[3]


def test_report_rank_deficient_rows():
    grid = TimeGrid.linspace(0.0, 1.0, 4)
    with pytest.warns(RuntimeWarning):
        rows = conditioning_report(["monomial"], [2, 3, 4, 5], grid)
    assert [math.isinf(r.cond2) for r in rows] == [False, False, True, True]


@pytest.mark.parametrize("kind", ["monomial", "legendre"])
def test_report_monotone_in_degree(kind):
    rows = conditioning_report([kind], range(0, 11), TimeGrid.linspace(0, 1, 25))
    vals = [r.cond2 for r in rows]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))


def test_orthogonality_midpoint_quadrature():
    n = 10_000
    s = (np.arange(n) + 0.5) / n
    P = legendre_values(6, s)
    gram = P @ P.T / n
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) < 1e-6
    assert np.allclose(np.diag(gram), 1.0 / (2 * np.arange(7) + 1), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(
    degree=st.integers(0, 8),
    coeffs=st.lists(st.floats(-10, 10, allow_nan=False), min_size=9, max_size=9),
)
def test_span_equivalence(degree, coeffs):
    s = np.linspace(0, 1, 100)
    from polyode.basis import monomial_values

    M = monomial_values(degree, s).T
    L = legendre_values(degree, s).T
    target = M @ np.array(coeffs[: degree + 1])
    sol, *_ = np.linalg.lstsq(L, target, rcond=None)
    assert np.max(np.abs(L @ sol - target)) < 1e-10 * max(1.0, np.max(np.abs(target)))


@pytest.mark.parametrize("N", [12, 25, 50])
def test_legendre_better_conditioned(N):
    grid = TimeGrid.linspace(0.0, 1.0, N)
    for d in range(2, 11):
        if d + 1 > N:
            continue
        km = condition_number(build_basis_matrix(BasisKind("monomial", d), grid).T)
        kl = condition_number(build_basis_matrix(BasisKind("legendre", d), grid).T)
        assert kl <= km


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=3, max_size=20, unique=True))
def test_arbitrary_grid_matrix_matches_pointwise(points):
    pts = sorted(points)
    grid = TimeGrid(pts[0], 1.0, tuple(pts)) if pts[0] < 1.0 else None
    if grid is None:
        return
    A = build_basis_matrix(BasisKind("legendre", 3), grid)
    for j, t in enumerate(pts):
        for i in range(4):
            assert A[i, j] == pytest.approx(eval_legendre(i, t, grid), abs=1e-14)
