"""Initial camera recovery from pixel/reflected-line incidences.

Each correspondence triple pins a 3D line: the lifted plane points of pose
0 and pose 2 (the widest separation) both lie on the reflected ray, and the
camera must project that line through the pixel that observed it.  Stacking
the incidences gives a linear system in the 18 entries of the camera's line
projection matrix.

Three estimation routes, in increasing order of built-in structure:

- solve_linear: plain least-squares over all 18 parameters; exact on clean
  data, algebraic-only (no rigidity), and fragile under noise.
- solve_constrained: intrinsics factored out by a diagonal column scaling,
  so the linear unknown is the line matrix of a metric camera [R T]; the
  decoded pose is then polished by Gauss-Newton over (R, T) directly on
  the geometric point-to-line cost.
- focal_sweep: one-dimensional search over a shared focal length with the
  principal point pinned to the image center, using solve_constrained as
  the inner solver and the point-to-line cost as the objective.

Conditioning matters here far more than in ordinary resection.  Reflected
rays off a rotationally symmetric mirror all meet the axis through the
optical center and the symmetry center, so each such mirror contributes a
near-null direction to the incidence matrix on top of the true solution;
with two spheres the trailing spectrum is triple and collapses under mm
noise.  Two measures keep the solvers usable:

- observations are rescaled internally (affine pixel normalization, global
  world scale applied to the line coordinates) before assembly, and
- the constrained route never trusts the least-squares vector alone: the
  geometric refinement over the rigid-motion manifold excludes the
  spurious directions by construction.

Lines are unit-normalized when observations are built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import least_squares

from .errors import (
    CheiralityUnresolvableError,
    DegenerateLineProjectionError,
    RankDeficientZError,
    SweepNoMinimumError,
    TooFewObservationsError,
)
from .plucker import dual, line_to_point_matrix, lines_from_points, point_to_line_matrix
from .types import CalibrationEstimate, CorrespondenceSet, Intrinsics, PlanePosePair

MIN_OBSERVATIONS = 17
SWEEP_SPAN = (0.15, 10.0)  # focal range as multiples of the image diagonal
SWEEP_SAMPLES = 120

# line-coordinate slots that are quadratic (resp. linear) in the endpoints;
# a world rescale X -> X/rho divides them by rho^2 (resp. rho)
_QUAD_SLOTS = (0, 1, 3)
_LIN_SLOTS = (2, 4, 5)


@dataclass(frozen=True)
class LineObservationSet:
    """Pixel/line incidence pairs feeding the camera solvers.

    pixels are homogeneous with third coordinate 1; lines are unit-norm
    6-vectors; indices map each item back to its source triple.
    """

    pixels: np.ndarray
    lines: np.ndarray
    indices: np.ndarray
    n_skipped: int = 0

    def __len__(self) -> int:
        return len(self.pixels)

    def centered(self, u0: float, v0: float) -> "LineObservationSet":
        """Same observations with the image origin moved to (u0, v0)."""
        px = self.pixels.copy()
        px[:, 0] -= u0
        px[:, 1] -= v0
        return LineObservationSet(px, self.lines, self.indices, self.n_skipped)


def build_observations(corrs: CorrespondenceSet, poses: PlanePosePair) -> LineObservationSet:
    """One (pixel, reflected-line) item per triple.

    Triples whose pose-0 and pose-2 lifts are closer than 1 mm are skipped
    (the line direction would be noise); the skip count is kept on the
    result.
    """
    x0 = np.asarray(corrs.x0, dtype=float)
    x2 = np.asarray(corrs.x2, dtype=float)
    n = len(x0)
    z = np.zeros((n, 1))
    p0 = np.hstack([x0, z])
    p2 = np.hstack([x2, z]) @ poses.pose2.rotation.T + poses.pose2.translation
    keep = np.linalg.norm(p2 - p0, axis=1) >= 1.0
    lines = lines_from_points(p0[keep], p2[keep])
    lines /= np.linalg.norm(lines, axis=1, keepdims=True)
    pixels = np.hstack([np.asarray(corrs.pixels, dtype=float)[keep], np.ones((int(keep.sum()), 1))])
    return LineObservationSet(
        pixels=pixels,
        lines=lines,
        indices=np.flatnonzero(keep),
        n_skipped=int(n - keep.sum()),
    )


def _incidence_rows(obs: LineObservationSet) -> np.ndarray:
    duals = dual(obs.lines)
    return (obs.pixels[:, :, None] * duals[:, None, :]).reshape(len(obs), 18)


def _scale_line_coords(lines: np.ndarray, rho: float) -> np.ndarray:
    """Line coordinates as if every endpoint were divided by rho, re-unit."""
    out = lines.copy()
    out[:, _QUAD_SLOTS] /= rho * rho
    out[:, _LIN_SLOTS] /= rho
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _world_scale(lines: np.ndarray) -> float:
    """Typical distance of the lines from the world origin."""
    w = np.stack([lines[:, 2], -lines[:, 5], lines[:, 4]], axis=1)
    v = np.stack([lines[:, 3], -lines[:, 1], lines[:, 0]], axis=1)
    dists = np.linalg.norm(v, axis=1) / np.linalg.norm(w, axis=1)
    rho = float(np.mean(dists))
    return rho if np.isfinite(rho) and rho > 1e-9 else 1.0


def _normalized_copy(obs: LineObservationSet, center_pixels: bool):
    """Rescaled observations plus the transforms that undo the rescale.

    Returns (obs_n, A, s_pix, rho) with A the 3x3 pixel map applied (pure
    scale when center_pixels is false, so a principal-point-centered origin
    stays put).
    """
    px = obs.pixels[:, :2]
    c = px.mean(axis=0) if center_pixels else np.zeros(2)
    spread = np.mean(np.linalg.norm(px - c, axis=1))
    s_pix = np.sqrt(2.0) / spread if spread > 1e-12 else 1.0
    a = np.array([[s_pix, 0.0, -s_pix * c[0]], [0.0, s_pix, -s_pix * c[1]], [0.0, 0.0, 1.0]])
    rho = _world_scale(obs.lines)
    obs_n = LineObservationSet(
        pixels=np.hstack([(px - c) * s_pix, np.ones((len(px), 1))]),
        lines=_scale_line_coords(obs.lines, rho),
        indices=obs.indices,
        n_skipped=obs.n_skipped,
    )
    return obs_n, a, s_pix, rho


def solve_linear(obs: LineObservationSet) -> np.ndarray:
    """Unconstrained 3x6 line projection matrix by least squares.

    The result satisfies the incidences algebraically but is not forced to
    be the line matrix of any actual pinhole camera; downstream consumers
    either decompose it best-effort or use the constrained route.  The
    observations are used exactly as given (no internal rescaling), so the
    returned flattened matrix is the least right singular vector of the
    incidence matrix built from them.
    """
    if len(obs) < MIN_OBSERVATIONS:
        raise TooFewObservationsError(
            f"need at least {MIN_OBSERVATIONS} observations, got {len(obs)}"
        )
    z = _incidence_rows(obs)
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    if s[16] < 1e-10 * s[0]:
        raise RankDeficientZError(
            "incidence matrix leaves more than a scale ambiguity"
        )
    return vt[17].reshape(3, 6)


def point_line_cost(
    line_matrix: np.ndarray, obs: LineObservationSet, return_excluded: bool = False
):
    """Sum of squared point-to-line distances in pixels squared.

    Each reflected line is projected to the image; the squared distance of
    its pixel from that 2D line is (x . l)^2 / (a^2 + b^2).  Items whose
    projected line has a vanishing direction part are excluded; if every
    item degenerates the cost is undefined and an error is raised.
    """
    img = obs.lines @ dual(line_matrix).T  # (n, 3) rows: projected lines
    ab2 = img[:, 0] ** 2 + img[:, 1] ** 2
    good = ab2 > 1e-20
    if not np.any(good):
        raise DegenerateLineProjectionError(
            "every projected line degenerates to a point"
        )
    num = np.einsum("ij,ij->i", obs.pixels[good], img[good]) ** 2
    cost = float(np.sum(num / ab2[good]))
    if return_excluded:
        return cost, int(len(obs) - good.sum())
    return cost


def camera_line_matrix(
    intrinsics: Intrinsics, rotation: np.ndarray, translation: np.ndarray
) -> np.ndarray:
    """Line projection matrix of K[R T]."""
    p = intrinsics.matrix() @ np.hstack(
        [rotation, np.asarray(translation, dtype=float).reshape(3, 1)]
    )
    return point_to_line_matrix(p)


def _closest_rotation(g: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(g)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def _rotation_to_axis_angle(r: np.ndarray) -> np.ndarray:
    cos = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    if theta < 1e-12:
        return np.zeros(3)
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    n = np.linalg.norm(axis)
    if n < 1e-12:
        # theta near pi: axis from the dominant column of r + I
        m = r + np.eye(3)
        axis = m[:, int(np.argmax(np.diag(m)))]
        return theta * axis / np.linalg.norm(axis)
    return theta * axis / n


def _axis_angle_to_rotation(v: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(v)
    if theta < 1e-14:
        return np.eye(3)
    k = v / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def _metric_decode(metric_lm: np.ndarray):
    """Scaled line matrix of lambda [R T] -> (R0, T0, info).

    Scale from the mean rotation-row norm, sign from the cheirality rule
    (world origin in front of the camera).
    """
    g = line_to_point_matrix(metric_lm, tol=np.inf)
    row_norms = np.linalg.norm(g[:, :3], axis=1)
    lam = float(np.mean(row_norms))
    if lam <= 0 or not np.isfinite(lam):
        raise RankDeficientZError("metric camera rows collapsed to zero")
    g = g / lam
    if g[2, 3] < 0:
        g = -g
    if abs(g[2, 3]) < 1e-9 * max(1.0, float(np.linalg.norm(g[:, 3]))):
        raise CheiralityUnresolvableError(
            "world origin sits in the camera's principal plane; sign of the "
            "camera cannot be fixed"
        )
    spread = float(np.max(np.abs(row_norms / lam - 1.0)))
    info = {
        "row_norm_spread": spread,
        "non_rotation_residual": spread > 0.10,
        "improper_rotation": bool(np.linalg.det(g[:, :3]) < 0),
    }
    return _closest_rotation(g[:, :3]), g[:, 3].copy(), info


def _refine_metric(fx: float, fy: float, obs: LineObservationSet, starts, free_focal=False):
    """Gauss-Newton over (R, T) on the point-to-line residuals.

    Parameters live on the rigid-motion manifold (axis-angle + translation)
    so directions that are not realizable by any metric camera cannot enter
    the solution.  With free_focal a shared log-focal joins the parameters
    (fy scaled in proportion).  Returns the best (f, R, T, cost) over the
    given starts.
    """
    lines = obs.lines
    pixels = obs.pixels
    aspect = fy / fx

    def residuals(theta):
        f = np.exp(theta[0])
        p = np.diag([f, f * aspect, 1.0]) @ np.hstack(
            [_axis_angle_to_rotation(theta[1:4]), theta[4:].reshape(3, 1)]
        )
        img = lines @ dual(point_to_line_matrix(p)).T
        ab2 = img[:, 0] ** 2 + img[:, 1] ** 2 + 1e-30
        return np.einsum("ij,ij->i", pixels, img) / np.sqrt(ab2)

    best = None
    for r0, t0 in starts:
        theta0 = np.concatenate([[np.log(fx)], _rotation_to_axis_angle(r0), t0])
        if free_focal:
            fit = least_squares(
                residuals, theta0, method="lm", xtol=1e-12, ftol=1e-12, max_nfev=400
            )
        else:
            fit = least_squares(
                lambda q: residuals(np.concatenate([[np.log(fx)], q])),
                theta0[1:],
                method="lm",
                xtol=1e-12,
                ftol=1e-12,
                max_nfev=300,
            )
            fit.x = np.concatenate([[np.log(fx)], fit.x])
        if best is None or fit.cost < best.cost:
            best = fit
    rotation = _axis_angle_to_rotation(best.x[1:4])
    return float(np.exp(best.x[0])), rotation, best.x[4:].copy(), 2.0 * float(best.cost)


def _solve_constrained_scaled(fx_n, fy_n, obs_n, z_n, init=None, refine=True):
    """Constrained solve in an already-rescaled frame; T stays in that frame."""
    d = np.concatenate([np.full(6, fy_n), np.full(6, fx_n), np.full(6, fx_n * fy_n)])
    _, s, vt = np.linalg.svd(z_n * d, full_matrices=False)
    if s[16] < 1e-12 * s[0]:
        raise RankDeficientZError(
            "incidence matrix leaves more than a scale ambiguity"
        )
    starts = []
    info = {}
    try:
        r0, t0, info = _metric_decode(vt[17].reshape(3, 6))
        starts.append((r0, t0))
    except (CheiralityUnresolvableError, RankDeficientZError):
        if init is None:
            raise
    if init is not None:
        starts.append(init)
    if refine:
        _, rotation, translation, cost = _refine_metric(fx_n, fy_n, obs_n, starts)
        info = dict(info, refined=True, cost_scaled=cost)
    else:
        rotation, translation = starts[0]
        info = dict(info, refined=False)
    if translation[2] < 0:
        raise CheiralityUnresolvableError(
            "refined camera places the world origin behind itself"
        )
    return rotation, translation, info


def solve_constrained(
    fx: float,
    fy: float,
    obs_centered: LineObservationSet,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    refine: bool = True,
):
    """Metric camera (R, T) given focal lengths, principal point at origin.

    The line matrix of diag(fx,fy,1)[R T] equals diag(fy*6, fx*6, fxfy*6)
    applied to the line matrix of [R T] (row-major flattening), so scaling
    the incidence columns reduces the linear unknown to the metric camera
    itself.  Rigidity is restored from the row norms (|scale| from their
    mean, sign from requiring the world origin in front of the camera) and
    the decoded pose is then refined on the geometric cost unless refine
    is false.  An optional init (R, T) joins the refinement starts, which
    lets a caller sweeping over focal lengths warm-start each solve.

    Under heavy noise the solve is only as good as its start: the geometric
    cost at a fixed focal length has spurious attractors (a reflected and a
    reversed camera) and the algebraic decode can fall into them, in which
    case the result is valid (orthonormal, in front of the origin) but far
    from the truth.  focal_sweep is the robust entry point; it tracks the
    solution across focal lengths and the continuation escapes basins that
    a fixed-focal solve cannot.

    Returns (rotation, translation, info); info flags non_rotation_residual
    (decoded row norms off by > 10%) and improper_rotation (mirrored
    geometry), both best-effort returns rather than failures.
    """
    if len(obs_centered) < MIN_OBSERVATIONS:
        raise TooFewObservationsError(
            f"need at least {MIN_OBSERVATIONS} observations, got {len(obs_centered)}"
        )
    obs_n, _, s_pix, rho = _normalized_copy(obs_centered, center_pixels=False)
    z_n = _incidence_rows(obs_n)
    init_n = None if init is None else (init[0], np.asarray(init[1], dtype=float) / rho)
    rotation, t_n, info = _solve_constrained_scaled(
        fx * s_pix, fy * s_pix, obs_n, z_n, init=init_n, refine=refine
    )
    return rotation, t_n * rho, info


def focal_sweep(
    obs: LineObservationSet,
    image_size: tuple[int, int],
    range_cfg: tuple[float, float, int] | None = None,
) -> CalibrationEstimate:
    """Best shared focal length with the principal point at the image center.

    Logarithmic grid search over the configured range followed by a
    golden-section refinement of the bracket around the best sample, with
    each constrained solve warm-started from its neighbor.  The minimum
    must be interior to the grid; a monotone cost curve means the range
    does not contain the answer.
    """
    width, height = image_size
    u0 = (width - 1) / 2.0
    v0 = (height - 1) / 2.0
    if range_cfg is None:
        diagonal = float(np.hypot(width, height))
        f_lo, f_hi, samples = SWEEP_SPAN[0] * diagonal, SWEEP_SPAN[1] * diagonal, SWEEP_SAMPLES
    else:
        f_lo, f_hi, samples = range_cfg
    if len(obs) < MIN_OBSERVATIONS:
        raise TooFewObservationsError(
            f"need at least {MIN_OBSERVATIONS} observations, got {len(obs)}"
        )
    centered = obs.centered(u0, v0)
    obs_n, _, s_pix, rho = _normalized_copy(centered, center_pixels=False)
    z_n = _incidence_rows(obs_n)

    def evaluate(f: float, init):
        try:
            rotation, t_n, info = _solve_constrained_scaled(
                f * s_pix, f * s_pix, obs_n, z_n, init=init
            )
        except (CheiralityUnresolvableError, RankDeficientZError):
            return np.inf, None
        return info["cost_scaled"], (rotation, t_n, info)

    grid = np.geomspace(f_lo, f_hi, int(samples))
    costs = np.full(len(grid), np.inf)
    solutions: list = [None] * len(grid)

    def sweep_pass(order):
        # the warm start survives failed evaluations: a single bad focal
        # value must not cut the chain for everything after it
        warm = None
        for i in order:
            cost_i, sol = evaluate(grid[i], warm)
            if cost_i < costs[i]:
                costs[i] = cost_i
                solutions[i] = sol
            if sol is not None:
                warm = (sol[0], sol[1])

    sweep_pass(range(len(grid)))
    if not np.all(np.isfinite(costs)):
        sweep_pass(range(len(grid) - 1, -1, -1))
    best = int(np.argmin(costs))
    if not np.isfinite(costs[best]) or best == 0 or best == len(grid) - 1:
        raise SweepNoMinimumError(
            "no interior cost minimum in the focal range "
            f"[{f_lo:.1f}, {f_hi:.1f}] px"
        )

    # golden-section in log-f on the bracketing interval
    warm = (solutions[best][0], solutions[best][1])
    lo, hi = np.log(grid[best - 1]), np.log(grid[best + 1])
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    e = lo + invphi * (hi - lo)
    fc, sc = evaluate(np.exp(c), warm)
    fe, se = evaluate(np.exp(e), warm)
    while hi - lo > 1e-6:
        if fc < fe:
            hi, e, fe, se = e, c, fc, sc
            c = hi - invphi * (hi - lo)
            fc, sc = evaluate(np.exp(c), warm)
        else:
            lo, c, fc, sc = c, e, fe, se
            e = lo + invphi * (hi - lo)
            fe, se = evaluate(np.exp(e), warm)
    f_best = float(np.exp((lo + hi) / 2.0))
    _, solution = evaluate(f_best, warm)
    if solution is None:
        raise SweepNoMinimumError("constrained solve failed at the sweep minimum")
    rotation, t_n, info = solution

    # joint polish of (f, R, T); the nested search leaves f quantized at the
    # golden-section resolution, which the free-focal solve removes
    f_n, rotation, t_n, _ = _refine_metric(
        f_best * s_pix, f_best * s_pix, obs_n, [(rotation, t_n)], free_focal=True
    )
    if t_n[2] <= 0:
        raise CheiralityUnresolvableError(
            "refined camera places the world origin behind itself"
        )
    f_best = f_n / s_pix
    translation = t_n * rho
    intr = Intrinsics(f_best, f_best, u0, v0)
    cost = point_line_cost(camera_line_matrix(intr, rotation, translation), obs)
    return CalibrationEstimate(
        intrinsics=intr,
        rotation=rotation,
        translation=translation,
        source="constrained",
        cost=cost,
        diagnostics={
            "f_grid": grid,
            "cost_curve": costs / (s_pix * s_pix),  # back to raw pixel units
            "n_observations": len(obs),
            "n_skipped": obs.n_skipped,
            **{k: v for k, v in info.items() if k != "cost_scaled"},
        },
    )


def decompose_point_matrix(p: np.ndarray) -> tuple[Intrinsics, np.ndarray, np.ndarray]:
    """Split a 3x4 point projection matrix into K, R, T.

    RQ factorization with the diagonal of K made positive; the residual
    sign is pushed into the scale so the rotation is proper.  The overall
    sign of p does not affect the result.
    """
    p = np.asarray(p, dtype=float)
    k_hat, r_hat = scipy.linalg.rq(p[:, :3])
    signs = np.sign(np.diag(k_hat))
    signs[signs == 0] = 1.0
    k = k_hat * signs
    r = signs[:, None] * r_hat
    lam = k[2, 2]
    if np.linalg.det(r) < 0:
        r = -r
        lam = -lam
    k = k / k[2, 2]
    t = np.linalg.solve(k, p[:, 3]) / lam
    intr = Intrinsics(fx=float(k[0, 0]), fy=float(k[1, 1]), u0=float(k[0, 2]), v0=float(k[1, 2]))
    return intr, r, t


def linear_estimate(obs: LineObservationSet) -> CalibrationEstimate:
    """Camera from the unconstrained solve, decomposed best-effort.

    The plain solve runs on internally rescaled observations; the result is
    mapped back and converted to point form without a validity gate
    (least-squares solutions violate the quadratic consistency conditions
    in proportion to noise), then RQ-decomposed.
    """
    obs_n, a, _, rho = _normalized_copy(obs, center_pixels=True)
    lm_n = solve_linear(obs_n)
    sdiag = np.ones(6)
    sdiag[list(_QUAD_SLOTS)] = 1.0 / (rho * rho)
    sdiag[list(_LIN_SLOTS)] = 1.0 / rho
    lm = a.T @ dual(dual(lm_n) * sdiag)
    p = line_to_point_matrix(lm, tol=np.inf)
    intr, rotation, translation = decompose_point_matrix(p)
    cost, excluded = point_line_cost(lm, obs, return_excluded=True)
    return CalibrationEstimate(
        intrinsics=intr,
        rotation=rotation,
        translation=translation,
        source="linear",
        cost=cost,
        diagnostics={
            "n_observations": len(obs),
            "n_skipped": obs.n_skipped,
            "n_excluded": excluded,
        },
    )
