"""Cross-ratio surface recovery and joint camera refinement.

A mirror point and its three plane correspondences are collinear in space,
so their images share the projective cross-ratio of the 3D quadruple.
Equating the two ratios pins the point's signed offset s along the
correspondence line, which turns a camera hypothesis into a reconstructed
surface and a per-point reprojection error.  Minimizing that error over
the 10 camera parameters (focals, principal point, angle-axis rotation,
translation) is a strictly stronger criterion than the point-to-line
distance used for initialization, because a line can pass near a pixel
while the point on it reprojects far away.

The plane poses stay fixed throughout; only the camera moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CoincidentPointsError,
    DegenerateCrossRatioError,
    DegenerateNormalError,
    DivergedLMError,
)
from .projection import _axis_angle_to_rotation, _rotation_to_axis_angle
from .types import (
    CalibrationEstimate,
    CorrespondenceSet,
    Intrinsics,
    PlanePosePair,
    SurfaceEstimate,
)

# lifted pose-0/pose-2 points closer than this carry no line direction
MIN_LIFT_SEPARATION_MM = 1.0
# X1 may sit off the X0-X2 line by this fraction of the segment length
# before the triple is treated as corrupted rather than merely noisy
COLLINEARITY_TOL = 0.05
MIN_PIXEL_SEPARATION = 1e-6
DEGENERATE_RATIO = 1e-10
# surface points further than 10 km from the plane are poles of the
# cross-ratio, not geometry
MAX_OFFSET_MM = 1e7


@dataclass(frozen=True)
class OptimizationParams:
    """Packed camera vector (fx, fy, u0, v0, rx, ry, rz, tx, ty, tz).

    The rotation block is angle-axis in radians on the canonical chart
    (angle below pi); translation in mm.
    """

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (10,):
            raise ValueError(f"theta must have 10 entries, got shape {theta.shape}")
        if np.linalg.norm(theta[4:7]) >= np.pi:
            raise ValueError("angle-axis block leaves the canonical chart")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_estimate(cls, est: CalibrationEstimate) -> "OptimizationParams":
        intr = est.intrinsics
        return cls(
            np.concatenate(
                [
                    [intr.fx, intr.fy, intr.u0, intr.v0],
                    _rotation_to_axis_angle(est.rotation),
                    est.translation,
                ]
            )
        )

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(*self.theta[:4])

    @property
    def rotation(self) -> np.ndarray:
        return _axis_angle_to_rotation(self.theta[4:7])

    @property
    def translation(self) -> np.ndarray:
        return self.theta[7:].copy()


@dataclass(frozen=True)
class LMConfig:
    max_iterations: int = 200
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    fd_step_rel: float = 1e-6
    max_rejects: int = 25
    damping0: float = 1e-3
    # triples whose residual moves more than this multiple of the median
    # response per mm of correspondence noise are masked before the
    # optimization; math.inf disables the gate
    sensitivity_cap: float = 5.0


@dataclass
class ConvergenceReport:
    status: str
    iterations: int
    initial_cost: float
    final_cost: float
    n_valid: int
    n_masked: int
    mask_reasons: dict[str, int] = field(default_factory=dict)


def _lift_arrays(x0: np.ndarray, x1: np.ndarray, x2: np.ndarray, poses: PlanePosePair):
    z = np.zeros((len(x0), 1))
    p0 = np.hstack([x0, z])
    p1 = np.hstack([x1, z]) @ poses.pose1.rotation.T + poses.pose1.translation
    p2 = np.hstack([x2, z]) @ poses.pose2.rotation.T + poses.pose2.translation
    return p0, p1, p2


def lift_triples(corrs: CorrespondenceSet, poses: PlanePosePair):
    """World positions of the three plane correspondences per triple."""
    return _lift_arrays(
        np.asarray(corrs.x0, dtype=float),
        np.asarray(corrs.x1, dtype=float),
        np.asarray(corrs.x2, dtype=float),
        poses,
    )


def _theta_vector(theta) -> np.ndarray:
    if isinstance(theta, OptimizationParams):
        return theta.theta
    return np.asarray(theta, dtype=float)


def _projection_matrix(theta: np.ndarray) -> np.ndarray:
    fx, fy, u0, v0 = theta[:4]
    k = np.array([[fx, 0.0, u0], [0.0, fy, v0], [0.0, 0.0, 1.0]])
    return k @ np.hstack(
        [_axis_angle_to_rotation(theta[4:7]), theta[7:].reshape(3, 1)]
    )


def _cross_ratio_roots(p0, p1, p2, x0, x1, x2, m):
    """Candidate cross-ratio offsets for each triple.

    p* are the lifted 3D points, x*/m dehomogenized image points.  With B
    the X2-X0 distance and xi1 the signed axis coordinate of X1, equating
    the 3D length ratio |xi1 - s| / |s| with its image counterpart k
    (built from the four Euclidean segment lengths) gives the quadratic
    (xi1 - s)^2 = k^2 s^2, whose roots are

        s = xi1 / (1 - k)   and   s = xi1 / (1 + k).

    Both satisfy the unsigned cross-ratio equality; which one is the
    actual surface point is decided by the caller (the reconstruction
    must land back on the observation).  The observation enters through
    its full 2D position, so the residual built from the winning root
    measures point-to-point error, not merely the distance from m to the
    projected line.  Returns (roots_minus, roots_plus, k, xi1).
    """
    axis = p0 - p2
    b = np.linalg.norm(axis, axis=-1)
    safe_b = np.where(b > 0, b, 1.0)
    xi1 = np.einsum("...i,...i->...", p1 - p2, axis) / safe_b

    d10 = np.linalg.norm(x1 - m, axis=-1)
    d20 = np.linalg.norm(x2 - x0, axis=-1)
    d1x = np.linalg.norm(x1 - x0, axis=-1)
    d2m = np.linalg.norm(x2 - m, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cr_img = (d10 * d20) / (d1x * d2m)
        k = cr_img * np.abs(safe_b - xi1) / safe_b
        roots_minus = xi1 / (1.0 - k)
        roots_plus = xi1 / (1.0 + k)
    return roots_minus, roots_plus, k, xi1


def _collinearity(p0, p1, p2):
    """Distance of X1 from the X0-X2 line over the segment length."""
    seg = p2 - p0
    seg_len = np.linalg.norm(seg, axis=-1)
    off = np.linalg.norm(np.cross(p1 - p0, seg), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(seg_len > 0, off / (seg_len * seg_len), np.inf)


def cross_ratio_s(triple_3d, images) -> float:
    """Signed distance from X2 to the surface point along the X2 -> X0 ray.

    triple_3d is the lifted (X0, X1, X2); images the 2D (x0, x1, x2, m)
    with m the observed pixel of the surface point.  The three plane
    points must be collinear up to COLLINEARITY_TOL and their images
    pairwise distinct.  Negative values mean the point lies on the far
    side of X2 from X0 (the mirror side).

    The image points are taken as measured pixels, so the solve runs in
    signed coordinates along the line through x0 and x2 (m's offset from
    that line is projected away); this keeps the branch of the length
    equality unambiguous, and on collinear inputs the signed separations
    coincide with the Euclidean segment lengths.
    """
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in triple_3d)
    x0, x1, x2, m = (np.asarray(p, dtype=float) for p in images)
    if _collinearity(p0, p1, p2) > COLLINEARITY_TOL:
        raise CoincidentPointsError(
            "lifted plane points are not collinear; wrong poses or corrupted triple"
        )
    for a, b, name in ((x0, x1, "x0/x1"), (x0, x2, "x0/x2"), (x1, x2, "x1/x2")):
        if np.linalg.norm(a - b) <= MIN_PIXEL_SEPARATION:
            raise CoincidentPointsError(f"image points {name} coincide")

    axis = p0 - p2
    b3 = float(np.linalg.norm(axis))
    xi1 = float((p1 - p2) @ axis) / b3
    d = x0 - x2
    d = d / np.linalg.norm(d)
    t0, t1, t2, tm = (float((y - x2) @ d) for y in (x0, x1, x2, m))
    numerator = b3 * xi1 * (t0 - t1) * (tm - t2)
    denominator = b3 * (t0 - t1) * (tm - t2) - (b3 - xi1) * (tm - t1) * (t0 - t2)
    if abs(denominator) < DEGENERATE_RATIO * abs(numerator):
        raise DegenerateCrossRatioError(
            "cross-ratio denominator vanishes; surface point is near infinity "
            "for this camera"
        )
    if numerator == 0.0:
        return 0.0
    return float(numerator / denominator)


def reconstruct_point(triple_3d, s: float) -> np.ndarray:
    """Surface point at signed offset s from X2 toward X0."""
    p0, _, p2 = (np.asarray(p, dtype=float) for p in triple_3d)
    seg = p0 - p2
    length = np.linalg.norm(seg)
    if length <= 0:
        raise CoincidentPointsError("X0 and X2 coincide; the line is undefined")
    if not np.isfinite(s):
        raise DegenerateCrossRatioError("offset s is not finite")
    return p2 + s * seg / length


def _homogeneous(p: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ p[:, :3].T + p[:, 3]


# stand-in for a singular evaluation in the noise-sensitivity probe;
# large enough to land far beyond any gate threshold, small enough that
# squaring stays finite
_SINGULAR_RESIDUAL = 1e100


def _resolve_offsets(theta: np.ndarray, lifts, m_obs):
    """Solve the cross-ratio for every triple and pick the physical root.

    Projects the lifted plane points with the camera described by theta,
    solves the segment-length cross-ratio equality for both algebraic
    roots, rebuilds a candidate surface point from each, and keeps the
    root whose reprojection lands closer to the observed pixel.  Returns
    (s, points, m_proj, feasible) where feasible marks triples whose
    plane projections and winning reprojection all have positive depth
    and a finite offset; everything else in those rows is unreliable.
    """
    p0, p1, p2 = lifts
    p = _projection_matrix(theta)
    with np.errstate(all="ignore"):
        h0 = _homogeneous(p, p0)
        h1 = _homogeneous(p, p1)
        h2 = _homogeneous(p, p2)
        in_front = (h0[:, 2] > 0) & (h1[:, 2] > 0) & (h2[:, 2] > 0)

        def dehom(h):
            w = np.where(np.abs(h[:, 2]) < 1e-300, 1e-300, h[:, 2])
            return h[:, :2] / w[:, None]

        x0, x1, x2 = dehom(h0), dehom(h1), dehom(h2)
        roots_minus, roots_plus, _, _ = _cross_ratio_roots(
            p0, p1, p2, x0, x1, x2, m_obs
        )
        seg_len = np.linalg.norm(p0 - p2, axis=1)
        direction = (p0 - p2) / np.where(seg_len > 0, seg_len, 1.0)[:, None]

        def rebuild(s):
            points = p2 + s[:, None] * direction
            h = _homogeneous(p, points)
            w = np.where(np.abs(h[:, 2]) < 1e-300, 1e-300, h[:, 2])
            proj = h[:, :2] / w[:, None]
            gap = np.einsum("ij,ij->i", m_obs - proj, m_obs - proj)
            gap = np.where(np.isfinite(gap) & (h[:, 2] > 0), gap, np.inf)
            return points, proj, h[:, 2], gap

        pts_a, proj_a, w_a, gap_a = rebuild(roots_minus)
        pts_b, proj_b, w_b, gap_b = rebuild(roots_plus)
        pick_a = gap_a <= gap_b
        s = np.where(pick_a, roots_minus, roots_plus)
        points = np.where(pick_a[:, None], pts_a, pts_b)
        m_proj = np.where(pick_a[:, None], proj_a, proj_b)
        depth = np.where(pick_a, w_a, w_b)
        feasible = (
            in_front
            & (depth > 0)
            & np.isfinite(s)
            & (np.abs(s) < MAX_OFFSET_MM)
            & np.isfinite(m_proj).all(axis=1)
        )
    return s, points, m_proj, depth, feasible


def _frozen_residuals(theta: np.ndarray, lifts, m_obs, frozen: np.ndarray) -> np.ndarray:
    """Residual vector under a fixed validity mask, continuous in theta.

    Unlike _evaluate this never re-gates validity: every triple in the
    frozen set is evaluated at every theta, so the optimizer sees a smooth
    objective instead of residuals snapping to zero when a triple crosses
    a gating boundary.  A frozen-in triple that becomes infeasible at this
    theta (plane projection or rebuilt point behind the camera, offset
    blown up) turns its rows into NaN: the trial cost comparison then
    rejects the step, and Jacobian columns built from such evaluations
    are zeroed by the caller.
    """
    _, _, m_proj, _, feasible = _resolve_offsets(theta, lifts, m_obs)
    with np.errstate(invalid="ignore"):
        residuals = m_obs - m_proj
    residuals = np.where(feasible[:, None], residuals, np.nan)
    residuals = np.where(frozen[:, None], residuals, 0.0)
    return residuals.ravel()


def noise_sensitivity(
    theta, corrs: CorrespondenceSet, poses: PlanePosePair, step_mm: float = 1e-3
) -> np.ndarray:
    """Per-triple response of the residual to correspondence noise, px/mm.

    Central differences of the reprojection residual with respect to the
    six in-plane coordinates of the triple, root-sum-squared.  The
    cross-ratio loses its grip on the surface point when the middle
    correspondence lifts close to either end of the segment (the ratio
    saturates), and this derivative is how that shows up numerically:
    such triples answer with hundreds of pixels per millimetre while
    well-posed ones answer with tens.
    """
    vec = _theta_vector(theta)
    m_obs = np.asarray(corrs.pixels, dtype=float)
    base = (
        np.asarray(corrs.x0, dtype=float),
        np.asarray(corrs.x1, dtype=float),
        np.asarray(corrs.x2, dtype=float),
    )
    keep_all = np.ones(len(m_obs), dtype=bool)

    def residuals_at(arrays):
        lifts = _lift_arrays(*arrays, poses)
        return _frozen_residuals(vec, lifts, m_obs, keep_all).reshape(-1, 2)

    total = np.zeros(len(m_obs))
    for which in range(3):
        for coord in range(2):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[which][:, coord] += step_mm
            minus[which][:, coord] -= step_mm
            dr = (residuals_at(plus) - residuals_at(minus)) / (2.0 * step_mm)
            dr = np.nan_to_num(
                dr,
                nan=_SINGULAR_RESIDUAL,
                posinf=_SINGULAR_RESIDUAL,
                neginf=-_SINGULAR_RESIDUAL,
            )
            dr = np.clip(dr, -_SINGULAR_RESIDUAL, _SINGULAR_RESIDUAL)
            total += np.einsum("ij,ij->i", dr, dr)
    return np.sqrt(total)


def _evaluate(theta: np.ndarray, lifts, m_obs):
    """Residuals and validity for one camera vector.

    Returns (residuals (n, 2), valid (n,), reasons, s (n,), points (n, 3)).
    Invalid rows carry zero residuals.  Euclidean segment lengths only
    mean something for points actually on the image plane, so triples
    whose plane correspondences project with non-positive depth are
    disabled, as are those whose rebuilt surface point falls behind the
    camera or whose cross-ratio has no usable root.
    """
    p0, p1, p2 = lifts
    n = len(p0)
    valid = np.ones(n, dtype=bool)
    reasons: dict[int, str] = {}

    def disable(mask, reason):
        fresh = mask & valid
        for i in np.flatnonzero(fresh):
            reasons[int(i)] = reason
        valid[fresh] = False

    seg_len = np.linalg.norm(p0 - p2, axis=1)
    disable(seg_len < MIN_LIFT_SEPARATION_MM, "coincident_lift")
    disable(_collinearity(p0, p1, p2) > COLLINEARITY_TOL, "noncollinear_lift")

    p = _projection_matrix(theta)
    with np.errstate(all="ignore"):
        h0 = _homogeneous(p, p0)
        h1 = _homogeneous(p, p1)
        h2 = _homogeneous(p, p2)
        in_front = (h0[:, 2] > 0) & (h1[:, 2] > 0) & (h2[:, 2] > 0)
        disable(~in_front, "behind_camera")

        def dehom(h):
            w = np.where(np.abs(h[:, 2]) < 1e-300, 1e-300, h[:, 2])
            return h[:, :2] / w[:, None]

        x0, x1, x2 = dehom(h0), dehom(h1), dehom(h2)

        def close(a, b):
            return np.linalg.norm(a - b, axis=1) < MIN_PIXEL_SEPARATION

        disable(
            close(x0, x1) | close(x0, x2) | close(x1, x2), "coincident_pixels"
        )

    s, points, m_proj, depth, feasible = _resolve_offsets(theta, lifts, m_obs)
    disable(~np.isfinite(depth) | (depth <= 0), "behind_camera")
    disable(~feasible, "degenerate_cross_ratio")
    s = np.where(valid, s, 0.0)

    with np.errstate(invalid="ignore"):
        residuals = np.where(valid[:, None], m_obs - m_proj, 0.0)
    residuals = np.nan_to_num(residuals, nan=0.0)
    points = np.where(valid[:, None], points, np.nan)
    return residuals, valid, reasons, s, points


def reproject_residuals(theta, corrs: CorrespondenceSet, poses: PlanePosePair):
    """Reprojection residual vector (2 entries per triple, pixels).

    For each triple the three plane correspondences are lifted with the
    fixed poses, projected with the camera described by theta, the offset
    s solved from the cross-ratio of those projections with the observed
    pixel, and the rebuilt surface point reprojected; the residual is the
    observed pixel minus that reprojection.  Invalid triples (degenerate
    ratio, coincident or behind-camera geometry) contribute zeros.
    """
    vec = _theta_vector(theta)
    lifts = lift_triples(corrs, poses)
    m_obs = np.asarray(corrs.pixels, dtype=float)
    residuals, _, _, _, _ = _evaluate(vec, lifts, m_obs)
    return residuals.ravel()


def _surface_from_theta(
    theta: np.ndarray, lifts, m_obs, pre_invalid: dict[int, str] | None = None
) -> SurfaceEstimate:
    residuals, valid, reasons, s, points = _evaluate(theta, lifts, m_obs)
    for i, reason in (pre_invalid or {}).items():
        if valid[i]:
            valid[i] = False
            reasons[i] = reason
            points[i] = np.nan
            s[i] = 0.0
    normals = np.full_like(points, np.nan)
    rotation = _axis_angle_to_rotation(theta[4:7])
    center = -rotation.T @ theta[7:]
    p0 = lifts[0]
    for i in np.flatnonzero(valid):
        view = center - points[i]
        incident = p0[i] - points[i]
        nv, ni = np.linalg.norm(view), np.linalg.norm(incident)
        if nv <= 0 or ni <= 0:
            valid[i] = False
            reasons[int(i)] = "degenerate_normal"
            points[i] = np.nan
            continue
        bisector = view / nv + incident / ni
        nb = np.linalg.norm(bisector)
        if nb < 1e-9:
            valid[i] = False
            reasons[int(i)] = "degenerate_normal"
            points[i] = np.nan
            continue
        normals[i] = bisector / nb
    return SurfaceEstimate(
        points=points,
        normals=normals,
        s_values=s,
        valid=valid,
        invalid_reason=reasons,
    )


def estimate_normals(
    surface: SurfaceEstimate, camera_center: np.ndarray, corrs: CorrespondenceSet
) -> np.ndarray:
    """Unit surface normals as the bisector of the view and incident rays.

    The normal at M bisects the ray toward the camera center and the ray
    toward the pose-0 correspondence; both rays leave the surface, so the
    bisector points toward the camera side (n . (C - M) > 0).
    """
    center = np.asarray(camera_center, dtype=float)
    x0 = np.asarray(corrs.x0, dtype=float)
    p0 = np.hstack([x0, np.zeros((len(x0), 1))])
    normals = np.full((len(p0), 3), np.nan)
    for i in np.flatnonzero(surface.valid):
        view = center - surface.points[i]
        incident = p0[i] - surface.points[i]
        u = view / np.linalg.norm(view)
        v = incident / np.linalg.norm(incident)
        bisector = u + v
        nb = np.linalg.norm(bisector)
        if nb < 1e-9:
            raise DegenerateNormalError(
                f"view and incident rays are anti-parallel for triple {i}"
            )
        normals[i] = bisector / nb
    return normals


def refine(
    theta0: CalibrationEstimate,
    corrs: CorrespondenceSet,
    poses: PlanePosePair,
    lm_cfg: LMConfig | None = None,
) -> tuple[CalibrationEstimate, SurfaceEstimate, ConvergenceReport]:
    """Levenberg-Marquardt over the 10 camera parameters.

    Starts from a focal-sweep estimate, minimizes the cross-ratio
    reprojection cost with a central-difference Jacobian, and returns the
    refined camera, the surface rebuilt from it, and a convergence report
    (status one of non_decreasing_start, gradient, step, plateau,
    max_iterations).  The validity mask is frozen at the starting camera
    so the objective stays fixed during the optimization; the returned
    surface is rebuilt (mask and all) at the optimized camera.

    Raises DivergedLMError when max_rejects consecutive damped steps all
    increase the cost by more than roundoff.
    """
    cfg = lm_cfg or LMConfig()
    theta = OptimizationParams.from_estimate(theta0).theta.copy()
    lifts = lift_triples(corrs, poses)
    m_obs = np.asarray(corrs.pixels, dtype=float)

    _, valid0, reasons0, _, _ = _evaluate(theta, lifts, m_obs)
    if np.isfinite(cfg.sensitivity_cap) and valid0.any():
        sens = noise_sensitivity(theta, corrs, poses)
        cap = cfg.sensitivity_cap * float(np.median(sens[valid0]))
        flagged = (sens > cap) & valid0
        for i in np.flatnonzero(flagged):
            reasons0[int(i)] = "noise_sensitive"
        valid0 = valid0 & ~flagged
    reason_counts: dict[str, int] = {}
    for r in reasons0.values():
        reason_counts[r] = reason_counts.get(r, 0) + 1

    def masked_residuals(vec):
        return _frozen_residuals(vec, lifts, m_obs, valid0)

    def report_with(status, iterations, cost0, cost):
        return ConvergenceReport(
            status=status,
            iterations=iterations,
            initial_cost=cost0,
            final_cost=cost,
            n_valid=int(valid0.sum()),
            n_masked=int(len(valid0) - valid0.sum()),
            mask_reasons=reason_counts,
        )

    carry_invalid = {i: r for i, r in reasons0.items() if r == "noise_sensitive"}

    def finish(vec, status, iterations, cost0, cost):
        params = OptimizationParams(_canonical(vec))
        surface = _surface_from_theta(params.theta, lifts, m_obs, carry_invalid)
        est = CalibrationEstimate(
            intrinsics=params.intrinsics,
            rotation=params.rotation,
            translation=params.translation,
            source="crossratio",
            cost=cost,
            diagnostics={
                "n_valid": int(valid0.sum()),
                "n_masked": int(len(valid0) - valid0.sum()),
                "iterations": iterations,
                "status": status,
            },
        )
        surface.calibration = est
        return est, surface, report_with(status, iterations, cost0, cost)

    r = masked_residuals(theta)
    cost0 = float(r @ r)
    if cost0 < 1e-16:
        return finish(theta, "non_decreasing_start", 0, cost0, cost0)

    damping = cfg.damping0
    cost = cost0
    for iteration in range(1, cfg.max_iterations + 1):
        jac = np.empty((len(r), 10))
        for k in range(10):
            h = cfg.fd_step_rel * max(abs(theta[k]), 1.0)
            plus = theta.copy()
            minus = theta.copy()
            plus[k] += h
            minus[k] -= h
            column = (masked_residuals(plus) - masked_residuals(minus)) / (2.0 * h)
            # a triple that turns infeasible inside the finite-difference
            # stencil contributes no derivative this iteration
            jac[:, k] = np.nan_to_num(column, nan=0.0)
        gradient = jac.T @ r
        if np.max(np.abs(gradient)) < cfg.gradient_tol:
            return finish(theta, "gradient", iteration - 1, cost0, cost)
        jtj = jac.T @ jac
        scale = np.diag(jtj).copy()
        scale[scale < 1e-12] = 1e-12
        accepted = False
        best_trial = np.inf
        for _reject in range(cfg.max_rejects):
            try:
                step = np.linalg.solve(jtj + damping * np.diag(scale), -gradient)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            trial = theta + step
            r_trial = masked_residuals(trial)
            cost_trial = float(r_trial @ r_trial)
            if cost_trial < cost:
                theta, r, cost = trial, r_trial, cost_trial
                damping = max(damping * 0.1, 1e-15)
                accepted = True
                break
            if np.isfinite(cost_trial):
                best_trial = min(best_trial, cost_trial)
            damping *= 10.0
        if not accepted:
            # at a noise-limited minimum the trials land a roundoff above
            # the current cost; that is convergence, not divergence
            if best_trial <= cost * (1.0 + 1e-12):
                return finish(theta, "plateau", iteration, cost0, cost)
            raise DivergedLMError(
                f"{cfg.max_rejects} consecutive damped steps increased the cost"
            )
        if np.linalg.norm(step) < cfg.step_tol * (np.linalg.norm(theta) + cfg.step_tol):
            return finish(theta, "step", iteration, cost0, cost)
    return finish(theta, "max_iterations", cfg.max_iterations, cost0, cost)


def _canonical(theta: np.ndarray) -> np.ndarray:
    """Angle-axis block back onto the canonical chart (angle < pi)."""
    out = theta.copy()
    out[4:7] = _rotation_to_axis_angle(_axis_angle_to_rotation(theta[4:7]))
    return out
