"""Solver tests: selection, Jacobians vs finite differences, IRLS machinery."""

import numpy as np
import pytest

from bitvo import datasets, descriptor, geometry, pipeline, solver
from bitvo.exceptions import DegenerateSystemError, EmptySelectionError
from bitvo.geometry import Intrinsics
from bitvo.solver import Residuals, SolverConfig

from conftest import build_level, fd_jacobian_rows, make_scene

SMALL_CFG = SolverConfig()  # defaults; scenes below are under the NMS threshold


class TestSelectPixels:
    def test_constant_saliency_high_res_empty(self):
        sal = np.ones((240, 320))
        depth = np.full((240, 320), 2.0)
        with pytest.raises(EmptySelectionError):
            solver.select_pixels(sal, depth)

    def test_single_spike(self):
        sal = np.zeros((240, 320))
        sal[100, 200] = 5.0
        depth = np.full((240, 320), 2.0)
        sel = solver.select_pixels(sal, depth)
        assert len(sel) == 1
        assert (sel.xs[0], sel.ys[0]) == (200, 100)
        assert sel.depths[0] == 2.0

    def test_low_res_takes_all_nonzero(self):
        sal = np.zeros((120, 160))
        pts = [(10, 12), (50, 80), (100, 40)]
        for x, y in pts:
            sal[y, x] = 1.0
        depth = np.full((120, 160), 3.0)
        sel = solver.select_pixels(sal, depth)
        assert sorted(zip(sel.xs, sel.ys)) == sorted(pts)

    def test_nms_keeps_strict_maxima_only(self):
        sal = np.zeros((240, 320))
        sal[50, 50] = 1.0
        sal[50, 51] = 1.0  # plateau: neither is strict
        sal[100, 100] = 2.0
        sal[100, 101] = 1.0  # strict maximum at (100, 100)
        depth = np.full((240, 320), 1.0)
        sel = solver.select_pixels(sal, depth)
        assert list(zip(sel.xs, sel.ys)) == [(100, 100)]

    def test_invalid_depth_excluded(self):
        sal = np.zeros((120, 160))
        sal[30, 40] = 1.0
        sal[60, 80] = 1.0
        depth = np.full((120, 160), np.nan)
        depth[30, 40] = 2.5
        sel = solver.select_pixels(sal, depth)
        assert list(zip(sel.xs, sel.ys)) == [(40, 30)]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            solver.select_pixels(np.ones((10, 10)), np.ones((10, 11)))


class TestPrecomputeJacobian:
    def test_zero_gradients_zero_matrix(self):
        channels = np.full((8, 40, 40), 0.5)
        bp = descriptor.ChannelStack(channels, margin=1)
        sel = solver.PixelSelection(
            xs=np.array([10, 20]), ys=np.array([15, 25]), depths=np.array([2.0, 3.0])
        )
        K = Intrinsics(fx=100, fy=100, cx=20, cy=20)
        cache = solver.precompute_jacobian(bp, sel, K)
        assert np.all(cache.rows == 0)
        assert np.all(cache.jtj == 0)

    def test_gram_matrix_is_row_outer_sum(self):
        seq = make_scene(seed=3)
        level, _ = build_level(seq, SMALL_CFG)
        outer = np.zeros((6, 6))
        for row in level.jacobian.rows:
            outer += np.outer(row, row)
        scale = max(1.0, np.abs(outer).max())
        assert np.abs(level.jacobian.jtj - outer).max() / scale < 1e-9
        assert np.abs(level.jacobian.jtj - level.jacobian.jtj.T).max() < 1e-9

    def test_rows_match_finite_differences(self):
        # moderate field of view keeps the sampler's interpolation cross
        # terms (which scale with the FD step) well under the tolerance
        seq = make_scene(seed=7, fx=140.0, width=96, height=72)
        level, bp = build_level(seq, SMALL_CFG)
        n, c = len(level.selection), bp.num_channels
        ana = level.jacobian.rows.reshape(n, c, 6)
        fd = fd_jacobian_rows(bp, level.selection, seq.intrinsics)
        num = np.linalg.norm((ana - fd).reshape(n, -1), axis=1)
        den = np.linalg.norm(fd.reshape(n, -1), axis=1)
        rel = num / (den + 1e-12)
        assert np.mean(rel < 1e-4) >= 0.95

    def test_empty_selection_rejected(self):
        bp = descriptor.ChannelStack(np.zeros((8, 10, 10)), margin=1)
        sel = solver.PixelSelection(np.array([], int), np.array([], int), np.array([]))
        with pytest.raises(ValueError):
            solver.precompute_jacobian(bp, sel, Intrinsics(100, 100, 5, 5))

    def test_invalid_depth_rejected(self):
        bp = descriptor.ChannelStack(np.zeros((8, 10, 10)), margin=1)
        sel = solver.PixelSelection(np.array([5]), np.array([5]), np.array([-1.0]))
        with pytest.raises(ValueError):
            solver.precompute_jacobian(bp, sel, Intrinsics(100, 100, 5, 5))


class TestComputeResiduals:
    def test_identity_same_frame_zero(self):
        seq = make_scene(seed=1)
        level, bp = build_level(seq, SMALL_CFG)
        res = solver.compute_residuals(
            bp, level.ref_values, level.selection, np.eye(4), seq.intrinsics
        )
        assert res.valid.all()
        assert np.abs(res.values).max() < 1e-12

    def test_all_outside_masked(self):
        seq = make_scene(seed=1)
        level, bp = build_level(seq, SMALL_CFG)
        T = np.eye(4)
        T[0, 3] = 1e4  # push every warp far outside
        res = solver.compute_residuals(bp, level.ref_values, level.selection, T, seq.intrinsics)
        assert res.num_valid == 0
        assert np.all(res.values == 0)

    def test_matches_per_pixel_oracle(self):
        seq = make_scene(seed=5, n_frames=2)
        cfg = SMALL_CFG
        level, _ = build_level(seq, cfg, frame=0)
        bp1 = pipeline.compute_channels(seq.images[1], cfg)
        T = geometry.se3_exp([0.001, 0, -0.001, 0.01, 0.005, 0])
        res = solver.compute_residuals(bp1, level.ref_values, level.selection, T, seq.intrinsics)
        n, c = len(level.selection), bp1.num_channels
        values = res.values.reshape(n, c)
        valid = res.valid.reshape(n, c)
        from bitvo import imgproc

        for i in range(0, n, max(1, n // 50)):
            p = np.array([level.selection.xs[i], level.selection.ys[i]], dtype=np.float64)
            warped, ok = geometry.warp_pixel(T, seq.intrinsics, p, level.selection.depths[i])
            for ch in range(c):
                v, ok2 = imgproc.bilinear_sample(bp1.channels[ch], warped[0], warped[1])
                if ok and ok2:
                    assert valid[i, ch]
                    assert values[i, ch] == pytest.approx(
                        v - level.ref_values[i, ch], abs=1e-12
                    )
                else:
                    assert not valid[i, ch]


class TestRobustSigma:
    def test_published_formula_value(self):
        res = Residuals(np.array([-1.0, 0.0, 1.0, 2.0, -2.0]), np.ones(5, bool))
        sigma = solver.robust_sigma(res, p_params=1)
        assert sigma == pytest.approx(1.4826 * (1 + 5 / 4) * 1.0, abs=1e-9)
        assert sigma == pytest.approx(3.33585, abs=1e-9)

    def test_all_zero_clamps_to_floor(self):
        res = Residuals(np.zeros(100), np.ones(100, bool))
        assert solver.robust_sigma(res) == 1e-6

    def test_small_data_factor_vanishes(self, rng):
        values = rng.normal(size=100000)
        res = Residuals(values, np.ones_like(values, bool))
        sigma = solver.robust_sigma(res)
        med = np.median(np.abs(values))
        assert sigma / (1.4826 * med) == pytest.approx(1.0, abs=1e-3)

    def test_too_few_valid(self):
        res = Residuals(np.ones(10), np.zeros(10, bool))
        with pytest.raises(DegenerateSystemError):
            solver.robust_sigma(res)

    def test_invalid_excluded_from_median(self):
        values = np.array([0.1, 0.2, 0.3, 100.0, 100.0, 0.15, 0.25, 0.05])
        valid = np.array([1, 1, 1, 0, 0, 1, 1, 1], bool)
        res = Residuals(values, valid)
        sigma = solver.robust_sigma(res, p_params=1)
        med = np.median(np.abs(values[valid]))
        assert sigma == pytest.approx(1.4826 * (1 + 5 / 5) * med)


class TestTukeyWeights:
    def test_zero_residual_weight_one(self):
        res = Residuals(np.array([0.0]), np.ones(1, bool))
        assert solver.tukey_weights(res, sigma=1.0)[0] == 1.0

    def test_cutoff_boundary_weight_zero(self):
        tau = solver.TUKEY_TAU
        res = Residuals(np.array([tau * 2.0, -tau * 2.0]), np.ones(2, bool))
        w = solver.tukey_weights(res, sigma=2.0)
        assert w[0] == 0.0 and w[1] == 0.0

    def test_half_tau(self):
        res = Residuals(np.array([solver.TUKEY_TAU / 2.0]), np.ones(1, bool))
        assert solver.tukey_weights(res, sigma=1.0)[0] == pytest.approx(0.5625)

    def test_invalid_zero_weight(self):
        res = Residuals(np.array([0.0, 0.0]), np.array([True, False]))
        w = solver.tukey_weights(res, sigma=1.0)
        assert w.tolist() == [1.0, 0.0]

    def test_beyond_cutoff_zero(self):
        res = Residuals(np.array([10.0]), np.ones(1, bool))
        assert solver.tukey_weights(res, sigma=1.0)[0] == 0.0


def gauss_solve_oracle(A, b):
    """Gaussian elimination with partial pivoting (independent of the solver)."""
    A = np.array(A, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = len(b)
    for i in range(n):
        piv = int(np.argmax(np.abs(A[i:, i]))) + i
        A[[i, piv]] = A[[piv, i]]
        b[[i, piv]] = b[[piv, i]]
        for k in range(i + 1, n):
            f = A[k, i] / A[i, i]
            A[k, i:] -= f * A[i, i:]
            b[k] -= f * b[i]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1 :] @ x[i + 1 :]) / A[i, i]
    return x


class TestSolveNormalEquations:
    def test_identity_system(self):
        cache = solver.JacobianCache(rows=np.eye(6), jtj=np.eye(6))
        res = Residuals(np.arange(1.0, 7.0), np.ones(6, bool))
        delta = solver.solve_normal_equations(cache, res, np.ones(6))
        assert np.allclose(delta, np.arange(1.0, 7.0))

    def test_all_weights_zero_degenerate(self):
        cache = solver.JacobianCache(rows=np.eye(6), jtj=np.eye(6))
        res = Residuals(np.ones(6), np.ones(6, bool))
        with pytest.raises(DegenerateSystemError):
            solver.solve_normal_equations(cache, res, np.zeros(6))

    def test_matches_gaussian_elimination_oracle(self, rng):
        for _ in range(20):
            rows = rng.normal(size=(60, 6))
            values = rng.normal(size=60)
            w = rng.uniform(0.1, 1.0, size=60)
            cache = solver.JacobianCache(rows=rows, jtj=rows.T @ rows)
            res = Residuals(values, np.ones(60, bool))
            delta = solver.solve_normal_equations(cache, res, w)
            A = rows.T @ (rows * w[:, None])
            b = rows.T @ (w * values)
            assert np.abs(delta - gauss_solve_oracle(A, b)).max() < 1e-9


class TestIcUpdate:
    def test_zero_delta_unchanged(self, rng):
        T = geometry.se3_exp(rng.normal(size=6) * 0.1)
        assert np.allclose(solver.ic_update(T, np.zeros(6)), T)

    def test_identity_base(self):
        delta = np.array([0.1, 0, 0, 0.5, 0, 0])
        T = solver.ic_update(np.eye(4), delta)
        assert np.abs(T - geometry.invert_rigid(geometry.se3_exp(delta))).max() < 1e-12

    def test_two_updates_compose_in_order(self, rng):
        T0 = geometry.se3_exp(rng.normal(size=6) * 0.2)
        d1 = rng.normal(size=6) * 0.05
        d2 = rng.normal(size=6) * 0.05
        T = solver.ic_update(solver.ic_update(T0, d1), d2)
        oracle = (
            T0
            @ np.linalg.inv(geometry.se3_exp(d1))
            @ np.linalg.inv(geometry.se3_exp(d2))
        )
        assert np.abs(T - oracle).max() < 1e-12


class TestOptimizeLevel:
    def test_zero_residual_fixed_point(self):
        seq = make_scene(seed=2)
        level, bp = build_level(seq, SMALL_CFG)
        result = solver.optimize_level(level, bp, np.eye(4), SMALL_CFG)
        assert result.converged
        assert result.iterations <= 2
        assert np.abs(result.pose - np.eye(4)).max() < 1e-10

    def test_one_pixel_translation_recovery(self):
        # fx * t / z0 = 1 pixel of uniform shift
        fx, z0 = 100.0, 4.0
        t = z0 / fx
        seq = make_scene(twist=(0, 0, 0, t, 0, 0), n_frames=2, fx=fx, z0=z0, seed=11)
        cfg = SMALL_CFG
        level, _ = build_level(seq, cfg, frame=0)
        bp1 = pipeline.compute_channels(seq.images[1], cfg)
        result = solver.optimize_level(level, bp1, np.eye(4), cfg)
        rel = geometry.invert_rigid(result.pose)
        t_err = np.linalg.norm(rel[:3, 3] - seq.poses[1][:3, 3])
        assert t_err < 0.02 * t

    def test_gamma_corrupted_same_recovery(self):
        fx, z0 = 100.0, 4.0
        t = z0 / fx
        seq = make_scene(twist=(0, 0, 0, t, 0, 0), n_frames=2, fx=fx, z0=z0, seed=11)
        cfg = SMALL_CFG
        level, _ = build_level(seq, cfg, frame=0)
        corrupted = datasets.apply_gamma(seq.images[1], 0.6)
        bp1 = pipeline.compute_channels(corrupted, cfg)
        result = solver.optimize_level(level, bp1, np.eye(4), cfg)
        rel = geometry.invert_rigid(result.pose)
        t_err = np.linalg.norm(rel[:3, 3] - seq.poses[1][:3, 3])
        assert t_err < 0.02 * t

    def test_degenerate_first_iteration_propagates(self):
        seq = make_scene(seed=2)
        level, bp = build_level(seq, SMALL_CFG)
        T = np.eye(4)
        T[0, 3] = 1e4  # nothing projects inside
        with pytest.raises(DegenerateSystemError):
            solver.optimize_level(level, bp, T, SMALL_CFG)

    def test_fixed_weight_objective_non_increasing(self):
        # near-quadratic basin: small shift, weights frozen at 1
        fx, z0 = 100.0, 4.0
        t = 0.25 * z0 / fx
        seq = make_scene(twist=(0, 0, 0, t, 0, 0), n_frames=2, fx=fx, z0=z0, seed=4)
        cfg = SMALL_CFG
        level, _ = build_level(seq, cfg, frame=0)
        bp1 = pipeline.compute_channels(seq.images[1], cfg)
        T = np.eye(4)
        f_prev = None
        for _ in range(6):
            res = solver.compute_residuals(
                bp1, level.ref_values, level.selection, T, seq.intrinsics
            )
            w = res.valid.astype(np.float64)
            f = float(np.dot(w, res.values**2))
            if f_prev is not None:
                assert f <= f_prev + 1e-9
            f_prev = f
            delta = solver.solve_normal_equations(level.jacobian, res, w)
            T = solver.ic_update(T, delta)


class TestOptimizePyramid:
    def _keyframe_and_channels(self, seq, cfg, ref=0, cur=1):
        kf = pipeline.make_keyframe(
            seq.images[ref], seq.depths[ref], seq.intrinsics, np.eye(4), cfg
        )
        bps = pipeline.frame_channels(seq.images[cur], len(kf.levels), cfg)
        return kf, bps

    def test_identity_motion(self):
        seq = make_scene(seed=6, width=192, height=160, twist=(0, 0, 0, 0, 0, 0))
        cfg = SMALL_CFG
        kf, bps = self._keyframe_and_channels(seq, cfg)
        T, stats = solver.optimize_pyramid(kf.levels, bps, np.eye(4), cfg)
        assert np.linalg.norm(geometry.se3_log(T)) < 1e-6
        assert stats.converged

    def test_small_motion_recovery(self):
        # ~1 degree rotation plus ~1% of depth translation; the tilted plane
        # provides the parallax a fronto-parallel scene lacks (there the
        # rotation/translation ambiguity dominates the error), and channel
        # smoothing of 1.0 keeps the sampled-descriptor bias subordinate
        twist = (np.radians(0.6), np.radians(-0.5), np.radians(0.6), 0.03, -0.02, 0.02)
        seq = make_scene(
            seed=8, width=640, height=480, twist=twist, fx=480.0, z0=4.0, plane_tilt=(30, 15)
        )
        cfg = SolverConfig(sigma_channel=1.0)
        kf, bps = self._keyframe_and_channels(seq, cfg)
        T, stats = solver.optimize_pyramid(kf.levels, bps, np.eye(4), cfg)
        rel = geometry.invert_rigid(T)
        err = geometry.invert_rigid(seq.poses[1]) @ rel
        rot_err = np.degrees(geometry.rotation_angle(err))
        t_err = np.linalg.norm(err[:3, 3])
        t_mag = np.linalg.norm(seq.poses[1][:3, 3])
        assert len(kf.levels) == 4
        assert rot_err < 0.1
        assert t_err < 0.01 * t_mag

    def test_monotonic_map_invariance_end_to_end(self):
        # with no pre-smoothing the descriptor is bit-exact under monotonic
        # maps, so the recovered pose barely moves
        twist = (0.001, 0.002, -0.001, 0.02, 0.01, -0.015)
        seq = make_scene(seed=9, width=192, height=160, twist=twist)
        cfg = SolverConfig(sigma_pre=0.0)
        kf, _ = self._keyframe_and_channels(seq, cfg)
        mapped = 255.0 * (seq.images[1].astype(np.float64) / 255.0) ** 0.6
        bps_clean = pipeline.frame_channels(seq.images[1], len(kf.levels), cfg)
        bps_mapped = pipeline.frame_channels(mapped, len(kf.levels), cfg)
        T_clean, _ = solver.optimize_pyramid(kf.levels, bps_clean, np.eye(4), cfg)
        T_mapped, _ = solver.optimize_pyramid(kf.levels, bps_mapped, np.eye(4), cfg)
        diff = np.linalg.norm(geometry.se3_log(geometry.invert_rigid(T_clean) @ T_mapped))
        assert diff < 1e-3

    def test_level_mismatch_rejected(self):
        seq = make_scene(seed=6, width=192, height=160)
        cfg = SMALL_CFG
        kf, bps = self._keyframe_and_channels(seq, cfg)
        with pytest.raises(ValueError):
            solver.optimize_pyramid(kf.levels, bps[:-1], np.eye(4), cfg)


class TestConfigFile:
    def test_parse_and_defaults(self, tmp_path):
        path = tmp_path / "solver.cfg"
        path.write_text(
            "# solver settings\n"
            "tau = 3.0\n"
            "max_iterations = 25\n"
            "rel_tol = 1e-5\n"
            "sigma_pre = 0.0\n"
            "sigma_channel = 1.0\n"
            "mode = raw-intensity\n"
            "nms_min_width = 200\n"
            "nms_min_height = 150\n"
        )
        cfg = SolverConfig.from_file(path)
        assert cfg.tau == 3.0
        assert cfg.max_iterations == 25
        assert cfg.rel_tol == 1e-5
        assert cfg.sigma_pre == 0.0
        assert cfg.sigma_channel == 1.0
        assert cfg.mode == "raw-intensity"
        assert (cfg.nms_min_width, cfg.nms_min_height) == (200, 150)
        assert cfg.sigma_floor == 1e-6  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "solver.cfg"
        path.write_text("warp_speed = 9\n")
        with pytest.raises(ValueError):
            SolverConfig.from_file(path)

    def test_invalid_mode_rejected(self):
        with pytest.raises(ValueError):
            SolverConfig(mode="sift")

    def test_raw_intensity_channels(self):
        seq = make_scene(seed=6)
        cfg = SolverConfig(mode="raw-intensity")
        level, bp = build_level(seq, cfg)
        assert bp.num_channels == 1
        assert level.ref_values.shape[1] == 1
        result = solver.optimize_level(level, bp, np.eye(4), cfg)
        assert result.converged
        assert np.abs(result.pose - np.eye(4)).max() < 1e-10
