import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taskjscc.constellation import (
    Constellation, FitSchedule, build_qam, fit_constellation, nearest_index,
    quantization_loss, quantization_loss_grad_r, quantization_loss_grad_z,
    quantize_block, quantize_symbol)
from taskjscc.errors import ConstellationDivergence

ORDERS = [4, 16, 64, 256]


def brute_nearest(z, pts):
    best, bj = math.inf, -1
    for j, e in enumerate(pts):
        d = (z.real - e.real) ** 2 + (z.imag - e.imag) ** 2
        if d < best:
            best, bj = d, j
    return bj


def fd(f, r, h=1e-5):
    return (f(r + h) - f(r - h)) / (2 * h)


class TestBuild:
    def test_qpsk_points(self):
        c = build_qam(4, 2.0)
        np.testing.assert_array_equal(c.points, [-1 + 1j, 1 + 1j, -1 - 1j, 1 - 1j])

    def test_16qam_examples(self):
        c = build_qam(16, 3.0)
        assert c.points[0] == -1.5 + 1.5j
        assert c.points[5] == -0.5 + 0.5j
        assert c.spacing == 1.0

    def test_qpsk_sum_is_origin(self):
        assert build_qam(4, 2.0).points.sum() == 0

    @pytest.mark.parametrize("u", ORDERS)
    def test_regeneration_is_bit_exact(self, u):
        a = build_qam(u, 2.718281828)
        b = Constellation.from_dict(a.to_dict())
        assert a.points.tobytes() == b.points.tobytes()

    @pytest.mark.parametrize("u", [1, 2, 8, 9, 32, 1024])
    def test_rejects_unsupported_order(self, u):
        with pytest.raises(ValueError):
            build_qam(u, 1.0)

    @pytest.mark.parametrize("r", [0.0, -1.0, math.inf, math.nan])
    def test_rejects_bad_r(self, r):
        with pytest.raises(ValueError):
            build_qam(16, r)

    @settings(max_examples=50, deadline=None)
    @given(u=st.sampled_from(ORDERS), r=st.floats(1e-3, 1e3))
    def test_grid_geometry(self, u, r):
        c = build_qam(u, r)
        m = c.side
        grid = c.points.reshape(m, m)
        step = r / (m - 1)
        np.testing.assert_allclose(np.diff(grid.real, axis=1), step, rtol=1e-12)
        np.testing.assert_allclose(-np.diff(grid.imag, axis=0), step, rtol=1e-12)
        np.testing.assert_allclose(np.sort_complex(-c.points), np.sort_complex(c.points), atol=1e-12 * r)
        assert abs(np.max(np.abs(c.points.real)) - r / 2) <= 1e-12 * r
        assert abs(np.max(np.abs(c.points.imag)) - r / 2) <= 1e-12 * r


class TestQuantize:
    def test_examples(self):
        c = build_qam(4, 2.0)
        assert quantize_symbol(0.9 + 1.2j, c) == (1, 1 + 1j)
        assert quantize_symbol(0j, c) == (0, -1 + 1j)
        for j, e in enumerate(c.points):
            assert quantize_symbol(e, c) == (j, e)

    def test_block(self):
        c = build_qam(4, 2.0)
        out = quantize_block(np.array([0.9 + 1.2j, -0.8 - 1.1j]), c)
        np.testing.assert_array_equal(out, [1 + 1j, -1 - 1j])

    @pytest.mark.parametrize("u", ORDERS)
    def test_matches_brute_force(self, u):
        rng = np.random.default_rng(u)
        c = build_qam(u, 3.0)
        z = (rng.standard_normal(2000) + 1j * rng.standard_normal(2000)) * 1.5
        # exact midpoints between neighbours are tie cases
        z[:50] = c.points[np.arange(50) % u] + c.spacing / 2
        idx = nearest_index(z, c)
        assert [int(i) for i in idx] == [brute_nearest(v, c.points) for v in z]

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.complex_numbers(max_magnitude=20, allow_nan=False, allow_infinity=False),
                    min_size=1, max_size=40),
           st.sampled_from(ORDERS))
    def test_idempotent(self, zs, u):
        c = build_qam(u, 4.0)
        q = quantize_block(np.array(zs), c)
        np.testing.assert_array_equal(quantize_block(q, c), q)

    def test_batch_shape_kept(self):
        c = build_qam(16, 3.0)
        z = np.zeros((3, 5), dtype=complex)
        assert quantize_block(z, c).shape == (3, 5)


class TestLoss:
    def test_examples(self):
        c = build_qam(4, 2.0)
        assert quantization_loss([0.9 + 1.2j], c) == pytest.approx(math.sqrt(0.05), rel=1e-12)
        assert quantization_loss(c.points, c) == 0.0
        assert quantization_loss([0j], c) == pytest.approx(math.sqrt(2), rel=1e-12)

    @pytest.mark.parametrize("r", [0.5, 2.0, 7.0])
    def test_grad_r_origin(self, r):
        c = build_qam(4, r)
        g = quantization_loss_grad_r([0j], c)
        assert g == pytest.approx(1 / math.sqrt(2), rel=1e-12)
        num = fd(lambda s: quantization_loss([0j], build_qam(4, s)), r)
        assert abs(num - g) / g < 1e-6

    def test_grad_r_on_grid_is_zero(self):
        c = build_qam(16, 3.0)
        assert quantization_loss_grad_r(c.points, c) == 0.0

    @pytest.mark.parametrize("u", ORDERS)
    def test_grad_r_matches_finite_difference(self, u):
        rng = np.random.default_rng(7 + u)
        r = 3.0
        c = build_qam(u, r)
        z = rng.standard_normal(400) + 1j * rng.standard_normal(400)
        # keep symbols well inside their Voronoi cells so the assignment is
        # stable over the finite-difference step
        q = quantize_block(z, c)
        z = q + 0.3 * c.spacing * (z - q) / np.maximum(1.0, np.abs(z - q) / c.spacing)
        g = quantization_loss_grad_r(z, c)
        num = fd(lambda s: quantization_loss(z, build_qam(u, s)), r)
        assert abs(num - g) <= 1e-5 * max(abs(g), 1e-12)

    def test_grad_z_direction(self):
        c = build_qam(4, 2.0)
        g = quantization_loss_grad_z(np.array([2 + 1j, 1 + 1j]), c)
        np.testing.assert_allclose(g, [1 + 0j, 0j])


class TestFit:
    def _qpsk_source(self, seed=0, batch=64):
        rng = np.random.default_rng(seed)
        pts = build_qam(4, 2.0).points
        while True:
            yield pts[rng.integers(0, 4, batch)]

    @pytest.mark.parametrize("r0", [1.0, 5.0])
    def test_recovers_qpsk(self, r0):
        res = fit_constellation(self._qpsk_source(), 4, r0)
        assert res.r_star == pytest.approx(2.0, abs=0.01)

    def test_gaussian_cloud_agrees_across_inits(self):
        rng = np.random.default_rng(1)
        cloud = rng.standard_normal((256, 16)) + 1j * rng.standard_normal((256, 16))

        def source():
            i = 0
            while True:
                yield cloud[(i % 4) * 64:(i % 4 + 1) * 64]
                i += 1
        rs = [fit_constellation(source(), 16, r0).r_star for r0 in range(1, 11)]
        assert (max(rs) - min(rs)) / min(rs) < 0.01

    def test_fitted_r_beats_half_and_double(self):
        rng = np.random.default_rng(2)
        cloud = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
        res = fit_constellation(itertools.repeat(cloud), 16, 2.0)
        lq = lambda r: quantization_loss(cloud, build_qam(16, r))
        assert lq(res.r_star) <= lq(0.5 * res.r_star)
        assert lq(res.r_star) <= lq(2.0 * res.r_star)

    def test_full_batch_loss_never_rises(self):
        rng = np.random.default_rng(3)
        cloud = rng.standard_normal(2048) + 1j * rng.standard_normal(2048)
        res = fit_constellation(itertools.repeat(cloud), 16, 8.0)
        losses = np.array(res.loss_history)
        assert np.all(np.diff(losses) <= 1e-12)
        assert len(res.r_history) == len(losses) + 1

    def test_divergence_guard(self):
        src = self._qpsk_source()
        with pytest.raises(ConstellationDivergence):
            fit_constellation(src, 4, 1.0, FitSchedule(lr=1e4))

    def test_rejects_bad_init(self):
        with pytest.raises(ValueError):
            fit_constellation(self._qpsk_source(), 4, 0.0)
