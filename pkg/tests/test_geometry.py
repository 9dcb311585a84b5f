import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import nnls as scipy_nnls

from moma import geometry
from moma.errors import DimensionTooHigh
from moma.geometry import ErrorBox, contains, from_halfspaces, hull, max_gap, nearest_point, nnls, translate


def sorted_rows(a):
    a = np.round(np.asarray(a, float), 9) + 0.0
    return sorted(map(tuple, a))


class TestHull:
    def test_square(self):
        pts = [(0, 0), (1, 0), (0, 1), (1, 1), (0.5, 0.5)]
        poly = hull(pts)
        assert sorted_rows(poly.vertices) == [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert len(poly.offsets) == 4
        assert np.allclose(np.linalg.norm(poly.normals, axis=1), 1.0)

    def test_downward_closed_front(self):
        poly = hull([(1, 0), (0, 1)], downward_closed=True)
        assert sorted_rows(poly.vertices) == [(0, 1), (1, 0)]
        assert contains(poly, (0.5, 0.5))
        assert contains(poly, (-10, -3))
        assert not contains(poly, (0.51, 0.51))
        assert poly.support((1, 1)) == pytest.approx(1.0)
        assert poly.support((-1, 0)) == float("inf")

    def test_dominated_point_is_not_a_vertex(self):
        poly = hull([(1, 0), (0, 1), (0.4, 0.4)], downward_closed=True)
        assert len(poly.vertices) == 2

    def test_lower_dimensional(self):
        poly = hull([(0, 0, 0), (1, 1, 0)])
        assert contains(poly, (0.5, 0.5, 0))
        assert not contains(poly, (0.5, 0.5, 0.1))
        assert not contains(poly, (1.5, 1.5, 0))

    def test_single_point(self):
        poly = hull([(0.3, 0.7)])
        assert sorted_rows(poly.vertices) == [(0.3, 0.7)]
        assert contains(poly, (0.3, 0.7)) and not contains(poly, (0.3, 0.6))

    def test_dimension_cap(self):
        with pytest.raises(DimensionTooHigh):
            hull([tuple(range(geometry.MAX_DIM + 1))])


class TestHalfspaces:
    def test_box(self):
        poly = from_halfspaces([(1, 0), (0, 1), (-1, 0), (0, -1)], [1, 2, 0, 0])
        assert sorted_rows(poly.vertices) == [(0, 0), (0, 2), (1, 0), (1, 2)]
        assert len(poly.rays) == 0

    def test_downward_closed_over_set(self):
        s = 1 / np.sqrt(2)
        poly = from_halfspaces([(1, 0), (0, 1), (s, s)], [1, 1, s], downward_closed=True)
        assert sorted_rows(poly.vertices) == [(0, 1), (1, 0)]
        assert poly.downward_closed == (True, True)

    def test_normals_are_normalized(self):
        poly = from_halfspaces([(2, 0), (0, 3)], [2, 3], downward_closed=True)
        assert np.allclose(poly.offsets, [1, 1])


class TestQueries:
    def test_translate(self):
        poly = hull([(1, 0), (0, 1)], downward_closed=True)
        down = translate(poly, ErrorBox((0.1, 0.2), (0.0, 0.0)), "down")
        assert sorted_rows(down.vertices) == [(-0.1, 0.8), (0.9, -0.2)]
        assert contains(down, (0.4, 0.3)) and not contains(down, (0.5, 0.5))
        with pytest.raises(ValueError):
            translate(poly, ErrorBox.zero(2), "sideways")

    def test_nearest_point_of_front(self):
        poly = hull([(1, 0), (0, 1)], downward_closed=True)
        near, dist = nearest_point(poly, (1, 1))
        assert np.allclose(near, (0.5, 0.5))
        assert dist == pytest.approx(np.sqrt(0.5))
        _, inside = nearest_point(poly, (0.2, 0.2))
        assert inside == pytest.approx(0.0, abs=1e-12)

    def test_max_gap(self):
        under = hull([(1, 0), (0, 1)], downward_closed=True)
        over = from_halfspaces([(1, 0), (0, 1)], [1, 1], downward_closed=True)
        w, gap = max_gap(under, over)
        assert gap == pytest.approx(np.sqrt(0.5))
        assert np.allclose(w, (np.sqrt(0.5), np.sqrt(0.5)))
        _, none = max_gap(over, under)
        assert none == 0.0

    def test_max_gap_unbounded_over(self):
        under = hull([(1, 0), (0, 1)], downward_closed=True)
        over = from_halfspaces([(0, 1)], [1], downward_closed=True)
        _, gap = max_gap(under, over)
        assert gap == float("inf")


def test_error_box():
    box = ErrorBox((0.1, 0.0), (0.2, 0.3))
    assert box.width() == pytest.approx((0.3, 0.3))
    assert ErrorBox.zero(3).is_zero()
    with pytest.raises(ValueError):
        ErrorBox((-0.1,), (0.0,))


coords = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 3).flatmap(lambda d: st.lists(st.tuples(*[coords] * d), min_size=1, max_size=8)),
       st.booleans())
def test_hull_contains_generators_and_combinations(points, closed):
    pts = np.asarray(points)
    poly = hull(pts, downward_closed=closed)
    for p in pts:
        assert poly.slack(p) >= -1e-7
    for v in poly.vertices:
        assert poly.slack(v) >= -1e-7
    lam = np.linspace(1, 2, len(pts))
    assert contains(poly, lam @ pts / lam.sum(), 1e-7)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(coords, coords), min_size=1, max_size=6), st.tuples(coords, coords))
def test_nearest_point_is_the_projection(points, query):
    poly = hull(points, downward_closed=True)
    near, dist = nearest_point(poly, query)
    q = np.asarray(query)
    assert contains(poly, near, 1e-6)
    assert dist == pytest.approx(np.linalg.norm(q - near), abs=1e-9)
    # projection onto a convex set: no generator direction improves the distance
    residual = q - near
    for v in poly.vertices:
        assert residual @ (v - near) <= 1e-6
    for r in poly.recession_rays():
        assert residual @ r <= 1e-6


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_nnls_agrees_with_scipy(m, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    assume(np.linalg.matrix_rank(a) == min(m, n))
    x, res = nnls(a, b)
    ref_x, ref_res = scipy_nnls(a, b)
    assert np.all(x >= 0)
    assert res == pytest.approx(ref_res, abs=1e-8)
