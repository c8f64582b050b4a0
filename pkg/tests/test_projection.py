"""Tests for the camera recovery stage.

Covers incidence assembly, the unconstrained and constrained solvers, the
focal sweep, and the point-matrix decomposition, all against the ray-traced
simulator as oracle.
"""

import numpy as np
import pytest

from specsurf import projection as pj
from specsurf.errors import (
    CheiralityUnresolvableError,
    DegenerateLineProjectionError,
    RankDeficientZError,
    SweepNoMinimumError,
    TooFewObservationsError,
)
from specsurf.plane_pose import estimate_plane_poses
from specsurf.plucker import dual, lines_from_points, normalize_projective
from specsurf.sim import default_two_sphere_scene, generate_dataset
from specsurf.types import (
    CorrespondenceSet,
    Intrinsics,
    NoiseSpec,
    PlanePosePair,
    RigidPose,
    identity_pose,
)


def rot_err_deg(r, s):
    c = (np.trace(r @ s.T) - 1.0) / 2.0
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


@pytest.fixture(scope="module")
def scene():
    return default_two_sphere_scene()


@pytest.fixture(scope="module")
def poses(scene):
    return PlanePosePair(scene.pose1, scene.pose2)


@pytest.fixture(scope="module")
def clean_data(scene):
    return generate_dataset(scene, grid_step=8, noise=NoiseSpec(seed=3))


@pytest.fixture(scope="module")
def clean_obs(clean_data, poses):
    return pj.build_observations(clean_data, poses)


@pytest.fixture(scope="module")
def gt_lm(scene):
    return pj.camera_line_matrix(
        scene.intrinsics, scene.camera_pose.rotation, scene.camera_pose.translation
    )


@pytest.fixture(scope="module")
def clean_sweep(clean_obs, scene):
    return pj.focal_sweep(clean_obs, scene.image_size)


class TestBuildObservations:
    def test_counts_and_shapes(self, clean_obs, clean_data):
        assert len(clean_obs) == len(clean_data)
        assert clean_obs.n_skipped == 0
        assert np.array_equal(clean_obs.indices, np.arange(len(clean_data)))
        assert np.allclose(clean_obs.pixels[:, 2], 1.0)
        assert np.allclose(np.linalg.norm(clean_obs.lines, axis=1), 1.0, atol=1e-12)

    def test_lines_satisfy_self_intersection(self, clean_obs):
        # a valid line has zero reciprocal product with itself
        prod = np.einsum("ij,ij->i", clean_obs.lines, dual(clean_obs.lines))
        assert np.max(np.abs(prod)) < 1e-12

    def test_incidence_with_ground_truth_camera(self, clean_obs, gt_lm):
        lm = normalize_projective(gt_lm)
        img = clean_obs.lines @ dual(lm).T
        resid = np.abs(np.einsum("ij,ij->i", clean_obs.pixels, img))
        assert resid.max() < 1e-9

    def test_coincident_triples_skipped(self):
        n = 6
        x0 = np.arange(2.0 * n).reshape(n, 2) * 10.0
        x2 = x0 + np.array([5.0, 0.0])
        x2[3] = x0[3]  # identity pose keeps this lift coincident
        corrs = CorrespondenceSet(
            pixels=np.full((n, 2), 100.0),
            x0=x0,
            x1=np.zeros((n, 2)),
            x2=x2,
        )
        pair = PlanePosePair(identity_pose(), identity_pose())
        obs = pj.build_observations(corrs, pair)
        assert len(obs) == n - 1
        assert obs.n_skipped == 1
        assert 3 not in obs.indices


class TestSolveLinear:
    def test_recovers_ground_truth(self, clean_obs, gt_lm):
        lm = pj.solve_linear(clean_obs)
        dist = np.linalg.norm(normalize_projective(lm) - normalize_projective(gt_lm))
        assert dist < 1e-8

    def test_solution_is_least_singular_vector(self, clean_obs):
        lm = pj.solve_linear(clean_obs)
        p = lm.ravel()
        z = (clean_obs.pixels[:, :, None] * dual(clean_obs.lines)[:, None, :]).reshape(
            len(clean_obs), 18
        )
        s = np.linalg.svd(z, compute_uv=False)
        assert abs(np.linalg.norm(z @ p) - s[-1]) < 1e-12 * s[0]

    def test_duplicated_observations_same_solution(self, clean_obs):
        doubled = pj.LineObservationSet(
            pixels=np.vstack([clean_obs.pixels, clean_obs.pixels]),
            lines=np.vstack([clean_obs.lines, clean_obs.lines]),
            indices=np.concatenate([clean_obs.indices, clean_obs.indices]),
        )
        a = normalize_projective(pj.solve_linear(clean_obs))
        b = normalize_projective(pj.solve_linear(doubled))
        assert np.linalg.norm(a - b) < 1e-10

    def test_too_few_observations(self, clean_obs):
        small = pj.LineObservationSet(
            pixels=clean_obs.pixels[:16],
            lines=clean_obs.lines[:16],
            indices=clean_obs.indices[:16],
        )
        with pytest.raises(TooFewObservationsError):
            pj.solve_linear(small)

    def test_rank_deficient_raises(self, clean_obs):
        rep = pj.LineObservationSet(
            pixels=np.tile(clean_obs.pixels[:1], (20, 1)),
            lines=np.tile(clean_obs.lines[:1], (20, 1)),
            indices=np.arange(20),
        )
        with pytest.raises(RankDeficientZError):
            pj.solve_linear(rep)


class TestPointLineCost:
    def test_zero_at_ground_truth(self, clean_obs, gt_lm):
        assert pj.point_line_cost(gt_lm, clean_obs) < 1e-14

    def test_scale_invariance(self, clean_obs, gt_lm):
        # noisy matrix so the cost is a meaningful nonzero number
        rng = np.random.default_rng(5)
        lm = gt_lm + 1e-3 * np.linalg.norm(gt_lm) * rng.normal(size=(3, 6))
        base = pj.point_line_cost(lm, clean_obs)
        for s in (2.0, -3.0, 1e-5):
            assert abs(pj.point_line_cost(s * lm, clean_obs) - base) < 1e-9 * base

    def test_ground_truth_is_local_minimum(self, clean_obs, gt_lm):
        rng = np.random.default_rng(11)
        base = pj.point_line_cost(gt_lm, clean_obs)
        scale = np.linalg.norm(gt_lm)
        for _ in range(10):
            step = rng.normal(size=(3, 6))
            assert pj.point_line_cost(gt_lm + 1e-4 * scale * step, clean_obs) > base

    def test_all_items_degenerate_raises(self, clean_obs):
        lm = np.zeros((3, 6))
        lm[2] = np.ones(6)  # only the w-row survives: every image line is (0,0,c)
        with pytest.raises(DegenerateLineProjectionError):
            pj.point_line_cost(lm, clean_obs)

    def test_line_through_center_excluded(self, scene, clean_obs, gt_lm):
        cam = scene.camera_pose
        center = -cam.rotation.T @ cam.translation
        through = lines_from_points(
            center[None, :], center[None, :] + np.array([[120.0, -40.0, 310.0]])
        )
        through /= np.linalg.norm(through)
        mixed = pj.LineObservationSet(
            pixels=np.vstack([clean_obs.pixels[:40], [[5.0, 5.0, 1.0]]]),
            lines=np.vstack([clean_obs.lines[:40], through]),
            indices=np.arange(41),
        )
        cost, excluded = pj.point_line_cost(gt_lm, mixed, return_excluded=True)
        assert excluded == 1
        assert np.isfinite(cost)


class TestSolveConstrained:
    def test_exact_recovery_at_true_focals(self, scene, clean_obs):
        intr = scene.intrinsics
        cobs = clean_obs.centered(intr.u0, intr.v0)
        r, t, info = pj.solve_constrained(intr.fx, intr.fy, cobs)
        assert rot_err_deg(r, scene.camera_pose.rotation) < 1e-6
        t_rel = np.linalg.norm(t - scene.camera_pose.translation) / np.linalg.norm(
            scene.camera_pose.translation
        )
        assert t_rel < 1e-8
        assert not info["non_rotation_residual"]
        assert not info["improper_rotation"]

    def test_exact_recovery_without_refinement(self, scene, clean_obs):
        intr = scene.intrinsics
        cobs = clean_obs.centered(intr.u0, intr.v0)
        r, t, info = pj.solve_constrained(intr.fx, intr.fy, cobs, refine=False)
        assert not info["refined"]
        assert rot_err_deg(r, scene.camera_pose.rotation) < 1e-6
        t_rel = np.linalg.norm(t - scene.camera_pose.translation) / np.linalg.norm(
            scene.camera_pose.translation
        )
        assert t_rel < 1e-8

    def test_wrong_focal_costs_more(self, scene, clean_obs):
        intr = scene.intrinsics
        cobs = clean_obs.centered(intr.u0, intr.v0)
        costs = {}
        for mult in (1.0, 2.0):
            r, t, _ = pj.solve_constrained(mult * intr.fx, mult * intr.fy, cobs)
            lm = pj.camera_line_matrix(
                Intrinsics(mult * intr.fx, mult * intr.fy, 0.0, 0.0), r, t
            )
            costs[mult] = pj.point_line_cost(lm, cobs)
        assert costs[2.0] > costs[1.0]

    def test_warm_start_accepted(self, scene, clean_obs):
        intr = scene.intrinsics
        cobs = clean_obs.centered(intr.u0, intr.v0)
        cam = scene.camera_pose
        r, t, _ = pj.solve_constrained(
            intr.fx, intr.fy, cobs, init=(cam.rotation, cam.translation)
        )
        assert rot_err_deg(r, cam.rotation) < 1e-6

    def test_valid_or_raises_under_noise(self, scene, poses):
        # cold starts under heavy noise may land in a spurious basin, but
        # whatever comes back must be a camera in front of the origin
        intr = scene.intrinsics
        for seed in range(3):
            data = generate_dataset(
                scene, grid_step=8, noise=NoiseSpec(sigma_mm=2.0, seed=seed)
            )
            cobs = pj.build_observations(data, poses).centered(intr.u0, intr.v0)
            try:
                r, t, _ = pj.solve_constrained(intr.fx, intr.fy, cobs)
            except CheiralityUnresolvableError:
                continue
            assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
            assert np.linalg.det(r) > 0
            assert t[2] > 0

    def test_warm_start_accurate_under_noise(self, scene, poses):
        intr = scene.intrinsics
        cam = scene.camera_pose
        for seed in range(3):
            data = generate_dataset(
                scene, grid_step=8, noise=NoiseSpec(sigma_mm=2.0, seed=seed)
            )
            cobs = pj.build_observations(data, poses).centered(intr.u0, intr.v0)
            r, t, _ = pj.solve_constrained(
                intr.fx, intr.fy, cobs, init=(cam.rotation, cam.translation)
            )
            assert rot_err_deg(r, cam.rotation) < 2.0
            t_rel = np.linalg.norm(t - cam.translation) / np.linalg.norm(cam.translation)
            assert t_rel < 0.02

    def test_too_few_observations(self, clean_obs):
        small = pj.LineObservationSet(
            pixels=clean_obs.pixels[:10],
            lines=clean_obs.lines[:10],
            indices=clean_obs.indices[:10],
        )
        with pytest.raises(TooFewObservationsError):
            pj.solve_constrained(1400.0, 1400.0, small)


class TestFocalSweep:
    def test_recovers_focal_noise_free(self, clean_sweep, scene):
        est = clean_sweep
        assert abs(est.intrinsics.fx - scene.intrinsics.fx) / scene.intrinsics.fx < 1e-4
        assert est.intrinsics.fx == est.intrinsics.fy

    def test_recovers_pose_noise_free(self, clean_sweep, scene):
        assert rot_err_deg(clean_sweep.rotation, scene.camera_pose.rotation) < 1e-5
        t_rel = np.linalg.norm(
            clean_sweep.translation - scene.camera_pose.translation
        ) / np.linalg.norm(scene.camera_pose.translation)
        assert t_rel < 1e-6

    def test_principal_point_and_source(self, clean_sweep, scene):
        w, h = scene.image_size
        assert clean_sweep.intrinsics.u0 == (w - 1) / 2.0
        assert clean_sweep.intrinsics.v0 == (h - 1) / 2.0
        assert clean_sweep.source == "constrained"

    def test_local_minimum_certificate(self, clean_sweep):
        grid = clean_sweep.diagnostics["f_grid"]
        curve = clean_sweep.diagnostics["cost_curve"]
        b = int(np.argmin(curve))
        assert 0 < b < len(grid) - 1
        assert curve[b] <= curve[b - 1]
        assert curve[b] <= curve[b + 1]
        assert clean_sweep.cost <= curve[b] + 1e-12

    def test_reprojects_through_pixels_noise_free(self, clean_sweep, clean_obs):
        lm = pj.camera_line_matrix(
            clean_sweep.intrinsics, clean_sweep.rotation, clean_sweep.translation
        )
        img = clean_obs.lines @ dual(lm).T
        dist = np.abs(np.einsum("ij,ij->i", clean_obs.pixels, img)) / np.hypot(
            img[:, 0], img[:, 1]
        )
        assert dist.max() < 1e-6

    def test_explicit_range(self, clean_obs, scene):
        est = pj.focal_sweep(clean_obs, scene.image_size, range_cfg=(200.0, 14000.0, 60))
        assert abs(est.intrinsics.fx - 1400.0) / 1400.0 < 0.005

    def test_no_interior_minimum_raises(self, clean_obs, scene):
        with pytest.raises(SweepNoMinimumError):
            pj.focal_sweep(clean_obs, scene.image_size, range_cfg=(5000.0, 16000.0, 12))

    def test_deterministic(self, clean_sweep, clean_obs, scene):
        again = pj.focal_sweep(clean_obs, scene.image_size)
        assert again.intrinsics.fx == clean_sweep.intrinsics.fx
        assert np.array_equal(again.rotation, clean_sweep.rotation)
        assert np.array_equal(again.translation, clean_sweep.translation)

    def test_noisy_recovery_stays_close(self, scene, poses):
        data = generate_dataset(scene, grid_step=8, noise=NoiseSpec(sigma_mm=2.0, seed=0))
        obs = pj.build_observations(data, poses)
        est = pj.focal_sweep(obs, scene.image_size)
        assert abs(est.intrinsics.fx - 1400.0) / 1400.0 < 0.06
        assert rot_err_deg(est.rotation, scene.camera_pose.rotation) < 1.2
        assert est.translation[2] > 0
        assert np.max(np.abs(est.rotation.T @ est.rotation - np.eye(3))) < 1e-9

    def test_mirror_twin_rejected(self, scene, clean_data):
        sol = estimate_plane_poses(clean_data)
        assert len(sol.candidates) >= 2
        cfg = (400.0, 5000.0, 30)
        good = pj.focal_sweep(
            pj.build_observations(clean_data, sol.candidates[0]), scene.image_size, cfg
        )
        try:
            twin = pj.focal_sweep(
                pj.build_observations(clean_data, sol.candidates[1]),
                scene.image_size,
                cfg,
            )
        except (SweepNoMinimumError, CheiralityUnresolvableError):
            return
        assert twin.cost > 1e3 * max(good.cost, 1e-12)


class TestDecomposePointMatrix:
    def test_round_trips_random_cameras(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            k = np.array(
                [
                    [rng.uniform(300, 3000), 0.0, rng.uniform(-50, 700)],
                    [0.0, rng.uniform(300, 3000), rng.uniform(-50, 500)],
                    [0.0, 0.0, 1.0],
                ]
            )
            q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            if np.linalg.det(q) < 0:
                q = -q
            t = rng.normal(size=3) * 200.0
            p = k @ np.hstack([q, t.reshape(3, 1)])
            scale = rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 10.0)
            intr, r, tt = pj.decompose_point_matrix(scale * p)
            assert abs(intr.fx - k[0, 0]) < 1e-6 * k[0, 0]
            assert abs(intr.fy - k[1, 1]) < 1e-6 * k[1, 1]
            assert abs(intr.u0 - k[0, 2]) < 1e-6 * max(1.0, abs(k[0, 2]))
            assert np.max(np.abs(r - q)) < 1e-8
            assert np.max(np.abs(tt - t)) < 1e-6 * max(1.0, np.linalg.norm(t))


class TestLinearEstimate:
    def test_exact_recovery(self, clean_obs, scene):
        est = pj.linear_estimate(clean_obs)
        gt = scene.intrinsics
        assert abs(est.intrinsics.fx - gt.fx) / gt.fx < 1e-6
        assert abs(est.intrinsics.fy - gt.fy) / gt.fy < 1e-6
        assert abs(est.intrinsics.u0 - gt.u0) < 1e-3
        assert abs(est.intrinsics.v0 - gt.v0) < 1e-3
        assert rot_err_deg(est.rotation, scene.camera_pose.rotation) < 1e-6
        t_rel = np.linalg.norm(
            est.translation - scene.camera_pose.translation
        ) / np.linalg.norm(scene.camera_pose.translation)
        assert t_rel < 1e-8

    def test_rotation_proper_and_tagged(self, clean_obs):
        est = pj.linear_estimate(clean_obs)
        assert est.source == "linear"
        assert np.max(np.abs(est.rotation.T @ est.rotation - np.eye(3))) < 1e-9
        assert np.linalg.det(est.rotation) > 0
        assert est.cost < 1e-12
        assert est.diagnostics["n_excluded"] == 0


class TestNormalizationInternals:
    def test_line_rescale_matches_endpoint_rescale(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(40, 3)) * 300.0
        b = a + rng.normal(size=(40, 3)) * 150.0
        rho = 7.3
        direct = lines_from_points(a / rho, b / rho)
        direct /= np.linalg.norm(direct, axis=1, keepdims=True)
        lines = lines_from_points(a, b)
        lines /= np.linalg.norm(lines, axis=1, keepdims=True)
        scaled = pj._scale_line_coords(lines, rho)
        # rows agree up to a per-line sign
        dots = np.abs(np.einsum("ij,ij->i", direct, scaled))
        assert np.min(dots) > 1.0 - 1e-12

    def test_world_scale_reflects_line_distances(self):
        rng = np.random.default_rng(9)
        dists = rng.uniform(50.0, 900.0, size=60)
        anchors = rng.normal(size=(60, 3))
        anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
        dirs = np.cross(anchors, rng.normal(size=(60, 3)))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        a = anchors * dists[:, None]
        lines = lines_from_points(a, a + dirs * 400.0)
        lines /= np.linalg.norm(lines, axis=1, keepdims=True)
        rho = pj._world_scale(lines)
        assert abs(rho - dists.mean()) < 0.02 * dists.mean()
