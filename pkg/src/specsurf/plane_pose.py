"""Recovery of the two unknown plane motions from reflection triples.

Each reflection triple gives the in-plane coordinates of one surface point's
image on the reference plane at poses 0, 1 and 2.  Lifted to 3D, the three
points lie on one line (the reflected ray), and pose 0 is the world frame.
Eliminating the ray turns every triple into two linear constraints on a
24-vector packing products of the two unknown motions; the vector is found
in the nullspace of the stacked system and factored back into rigid motions.

The factorization is sign-ambiguous: flipping the plane normal direction of
both motions (a mirror twin) satisfies the same constraints with identical
residual, so candidates are returned ranked and the caller disambiguates
with camera-side evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllComplexRootsError,
    BranchM31ZeroError,
    NoRealAlphaError,
    NoValidCandidateError,
    RankAmbiguousError,
    TooFewCorrespondencesError,
)
from .types import CorrespondenceSet, PlanePosePair, RigidPose

MIN_TRIPLES = 12

# rank gap below which the nullspace is wider than the generic two
# directions and the motion cannot be recovered (e.g. pure translation)
RANK_GAP_MIN = 10.0

# cubic terms of the motion-form identity: slot indices (0-based) and sign
_CUBIC_TERMS = ((18, 6, 23, 1.0), (18, 8, 21, -1.0), (20, 0, 23, -1.0), (20, 2, 21, 1.0))


def pack_motion(pose1: RigidPose, pose2: RigidPose) -> np.ndarray:
    """24-vector of motion products annihilated by the design matrix.

    Layout: slots 0..8 and 9..17 hold two 3x3 row-major product blocks of
    the motions, slots 18..20 the third row of [R2[:,0] R2[:,1] T2], slots
    21..23 the third row of [R1[:,0] R1[:,1] T1].
    """
    m = np.column_stack([pose1.rotation[:, 0], pose1.rotation[:, 1], pose1.translation])
    n = np.column_stack([pose2.rotation[:, 0], pose2.rotation[:, 1], pose2.translation])
    a = np.outer(n[2], m[0]) - np.outer(n[0], m[2])
    b = np.outer(n[2], m[1]) - np.outer(n[1], m[2])
    return np.concatenate([a.ravel(), b.ravel(), n[2], m[2]])


def spurious_null_vector() -> np.ndarray:
    """Structural null direction of every design matrix (slots 20 and 23)."""
    v = np.zeros(24)
    v[20] = 1.0
    v[23] = 1.0
    return v / np.sqrt(2.0)


def build_design_matrix(x0, x1, x2) -> np.ndarray:
    """Stack two 24-column constraint rows per triple.

    x0, x1, x2 are (n,2) in-plane coordinates at poses 0, 1, 2.  Columns 20
    and 23 are exact negatives by construction, which is what creates the
    structural second null direction.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    n = len(x0)
    if n < MIN_TRIPLES:
        raise TooFewCorrespondencesError(
            f"need at least {MIN_TRIPLES} triples, got {n}"
        )
    ones = np.ones((n, 1))
    h1 = np.hstack([x1, ones])
    h2 = np.hstack([x2, ones])
    kron = (h2[:, :, None] * h1[:, None, :]).reshape(n, 9)
    z9 = np.zeros((n, 9))
    rows_x = np.hstack([kron, z9, -x0[:, 0:1] * h2, x0[:, 0:1] * h1])
    rows_y = np.hstack([z9, kron, -x0[:, 1:2] * h2, x0[:, 1:2] * h1])
    e = np.empty((2 * n, 24))
    e[0::2] = rows_x
    e[1::2] = rows_y
    return e


def nullspace_basis(e: np.ndarray, min_gap: float = RANK_GAP_MIN):
    """Two least singular directions of the design matrix and the rank gap.

    The generic system has rank 22; the gap ratio sigma_22/sigma_23
    (1-based, descending) measures how clearly the data pins down exactly
    two null directions.  Two failure shapes raise RankAmbiguousError: the
    gap ratio below min_gap (noise brackets the weakest data direction), and
    sigma_22 itself collapsing relative to sigma_1 (a nullity above two,
    e.g. exact pure translation, where the ratio of two near-zero values is
    meaningless).  min_gap is configurable because the ratio shrinks with
    measurement noise on healthy data.
    """
    if e.shape[0] < 2 * MIN_TRIPLES:
        raise TooFewCorrespondencesError(
            f"need at least {MIN_TRIPLES} triples, got {e.shape[0] // 2}"
        )
    _, s, vt = np.linalg.svd(e, full_matrices=False)
    gap = float(s[21] / s[22]) if s[22] > 0 else np.inf
    if s[21] < 1e-9 * s[0]:
        raise RankAmbiguousError(
            "more than two vanishing singular values; relative plane motion "
            "is degenerate (e.g. pure translation)",
            gap_ratio=gap,
        )
    if gap < min_gap:
        raise RankAmbiguousError(
            f"rank gap {gap:.3g} below {min_gap}; the two-dimensional "
            "nullspace is not separated from the data directions",
            gap_ratio=gap,
        )
    return vt[22], vt[23], gap


def _cubic_coefficients(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Ascending coefficients of the motion-form cubic along d1 + beta*d2."""
    coeffs = np.zeros(4)
    for i, j, k, sign in _CUBIC_TERMS:
        poly = np.convolve(np.convolve([d1[i], d2[i]], [d1[j], d2[j]]), [d1[k], d2[k]])
        coeffs += sign * poly
    return coeffs


def real_cubic_roots(coeffs: np.ndarray) -> list[float]:
    """Real roots of a polynomial given descending coefficients.

    Near-zero leading coefficients (relative to the largest) are trimmed so
    a degenerate cubic falls back to the lower-degree polynomial it actually
    is.  Roots come from the companion matrix (np.roots); a root counts as
    real when its imaginary part is below 1e-8*(1+|real part|).
    """
    desc = np.asarray(coeffs, dtype=float)
    scale = np.max(np.abs(desc)) if desc.size else 0.0
    if scale < 1e-14:
        return []
    trimmed = desc
    while len(trimmed) > 1 and abs(trimmed[0]) < 1e-10 * scale:
        trimmed = trimmed[1:]
    if len(trimmed) <= 1:
        return []
    out: list[float] = []
    for r in np.roots(trimmed):
        if abs(r.imag) < 1e-8 * (1.0 + abs(r.real)):
            out.append(float(r.real))
    unique: list[float] = []
    for b in sorted(out):
        if not unique or abs(b - unique[-1]) > 1e-9 * (1.0 + abs(b)):
            unique.append(b)
    return unique


def solve_beta(d1: np.ndarray, d2: np.ndarray) -> list[float]:
    """Real mixing coefficients beta with d1 + beta*d2 a valid motion form.

    The rank-one structure of the two outer-product blocks forces a cubic
    in beta built from four third-row slot products.  Raises
    AllComplexRootsError when the cubic has no real root (then no direction
    in the pencil satisfies the identity with a finite beta).
    """
    coeffs = _cubic_coefficients(d1, d2)  # ascending
    betas = real_cubic_roots(coeffs[::-1])
    if not betas:
        raise AllComplexRootsError("no real root of the motion-form cubic")
    return betas


def candidate_null_vectors(d1: np.ndarray, d2: np.ndarray) -> list[np.ndarray]:
    """Unit null directions satisfying the cubic motion-form identity.

    Solves the cubic along the pencil d1 + beta*d2; a vanishing leading
    coefficient adds the pure-d2 direction (beta at infinity).  Raises
    AllComplexRootsError when no real direction exists.
    """
    coeffs = _cubic_coefficients(d1, d2)  # ascending
    desc = coeffs[::-1]
    scale = np.max(np.abs(desc))
    if scale < 1e-14:
        # identity degenerates along the whole pencil; pass both basis
        # directions through and let residual scoring decide
        return [d1.copy(), d2.copy()]
    lead_small = abs(desc[0]) < 1e-10 * scale
    out: list[np.ndarray] = []
    for b in real_cubic_roots(desc):
        v = d1 + b * d2
        nv = np.linalg.norm(v)
        if nv > 1e-12:
            out.append(v / nv)
    if lead_small:
        out.append(d2.copy())
    if not out:
        raise AllComplexRootsError("no real root of the motion-form cubic")
    return out


def _swap_roles(d: np.ndarray) -> np.ndarray:
    """Null vector of the same data with the two motions' roles exchanged."""
    out = np.empty(24)
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = -d[3 * j + i]
            out[9 + 3 * i + j] = -d[9 + 3 * j + i]
    out[18:21] = d[21:24]
    out[21:24] = d[18:21]
    return out


def _eliminate_family(d: np.ndarray):
    """Shared elimination behind factoring: family params and squared scale.

    d must be unit length.  Returns (m1, m2, n1, n2, lam1, lam2, t) where the
    finished first/second rows are m1 + lam1*m3 etc. and t is the squared
    scale of the third rows, or None when the constraint system is too
    degenerate to pin the family down or t is not positive.
    """
    n3 = d[18:21]
    m3 = d[21:24]

    # block relations are linear in the unknown first/second rows; the
    # min-norm least-squares solution fixes the one-parameter null family
    # (adding (m3, n3)) at zero, reintroduced below as lam1/lam2
    sys = np.zeros((9, 6))
    rhs_a = np.zeros(9)
    rhs_b = np.zeros(9)
    for i in range(3):
        for j in range(3):
            r = 3 * i + j
            sys[r, j] = n3[i]
            sys[r, 3 + i] = -m3[j]
            rhs_a[r] = d[r]
            rhs_b[r] = d[9 + r]
    sol_a, *_ = np.linalg.lstsq(sys, rhs_a, rcond=None)
    sol_b, *_ = np.linalg.lstsq(sys, rhs_b, rcond=None)
    m1, n1 = sol_a[:3], sol_a[3:]
    m2, n2 = sol_b[:3], sol_b[3:]

    # unit/orthogonality of the four rotation columns constrains the family
    # parameters (lam1, lam2) and the squared scale t; eliminating t between
    # pairs of constraints leaves equations linear in (lam1, lam2)
    a = np.array([m1[0], m1[1], n1[0], n1[1]])
    b = np.array([m2[0], m2[1], n2[0], n2[1]])
    c = np.array([m3[0], m3[1], n3[0], n3[1]])

    rows = []
    rhs = []
    for i in range(4):
        for j in range(i + 1, 4):
            rows.append(
                [
                    2.0 * c[i] * c[j] * (c[j] * a[i] - c[i] * a[j]),
                    2.0 * c[i] * c[j] * (c[j] * b[i] - c[i] * b[j]),
                ]
            )
            rhs.append(
                -(
                    c[j] ** 2 * (a[i] ** 2 + b[i] ** 2)
                    - c[i] ** 2 * (a[j] ** 2 + b[j] ** 2)
                    - c[j] ** 2
                    + c[i] ** 2
                )
            )
    for p, q in ((0, 1), (2, 3)):
        cpq = c[p] * c[q]
        for i in range(4):
            rows.append(
                [
                    2.0 * a[i] * c[i] * cpq - c[i] ** 2 * (a[p] * c[q] + a[q] * c[p]),
                    2.0 * b[i] * c[i] * cpq - c[i] ** 2 * (b[p] * c[q] + b[q] * c[p]),
                ]
            )
            rhs.append(
                -(
                    cpq * (a[i] ** 2 + b[i] ** 2 - 1.0)
                    - c[i] ** 2 * (a[p] * a[q] + b[p] * b[q])
                )
            )
    c01 = c[0] * c[1]
    c23 = c[2] * c[3]
    rows.append(
        [
            c23 * (a[0] * c[1] + a[1] * c[0]) - c01 * (a[2] * c[3] + a[3] * c[2]),
            c23 * (b[0] * c[1] + b[1] * c[0]) - c01 * (b[2] * c[3] + b[3] * c[2]),
        ]
    )
    rhs.append(-(c23 * (a[0] * a[1] + b[0] * b[1]) - c01 * (a[2] * a[3] + b[2] * b[3])))

    g = np.asarray(rows)
    gr = np.asarray(rhs)
    norms = np.linalg.norm(g, axis=1)
    keep = norms > 1e-14 * max(norms.max(), 1e-300)
    if keep.sum() < 2:
        return None
    scale_rows = norms[keep][:, None]
    g = g[keep] / scale_rows
    gr = gr[keep] / scale_rows[:, 0]
    lam, *_ = np.linalg.lstsq(g, gr, rcond=None)
    lam1, lam2 = float(lam[0]), float(lam[1])

    # squared scale from all six constraints jointly (each is t*tau + kappa = 0)
    ai = a + lam1 * c
    bi = b + lam2 * c
    taus = [c[0] ** 2, c[1] ** 2, c[2] ** 2, c[3] ** 2, c01, c23]
    kappas = [
        ai[0] ** 2 + bi[0] ** 2 - 1.0,
        ai[1] ** 2 + bi[1] ** 2 - 1.0,
        ai[2] ** 2 + bi[2] ** 2 - 1.0,
        ai[3] ** 2 + bi[3] ** 2 - 1.0,
        ai[0] * ai[1] + bi[0] * bi[1],
        ai[2] * ai[3] + bi[2] * bi[3],
    ]
    taus = np.asarray(taus)
    kappas = np.asarray(kappas)
    denom = float(taus @ taus)
    if denom <= 0:
        return None
    t = float(-(taus @ kappas) / denom)
    if t <= 0:
        return None
    return m1, m2, n1, n2, lam1, lam2, t


def solve_alpha(d: np.ndarray) -> list[float]:
    """Scales alpha making alpha*d a motion form with unit rotation columns.

    The sign of the third rows is not observable from the collinearity
    system, so both signs are returned.  Raises BranchM31ZeroError when the
    first entry of motion 1's third row (the pivot this branch keys on)
    vanishes relative to the vector norm, and NoRealAlphaError when the
    scale constraint has no positive solution.
    """
    d = np.asarray(d, dtype=float)
    nd = np.linalg.norm(d)
    if nd == 0.0:
        raise NoRealAlphaError("zero vector has no motion-form scaling")
    if abs(d[21]) < 1e-8 * nd:
        raise BranchM31ZeroError("pivot slot 22 of the null vector is zero")
    res = _eliminate_family(d / nd)
    if res is None:
        raise NoRealAlphaError("no positive squared scale fits the unit constraints")
    t = res[6]
    alpha = float(np.sqrt(t)) / nd
    return [alpha, -alpha]


def _factor_null_vector(d: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Factor a motion-form 24-vector into candidate row matrices.

    Returns a list of (m, n) 3x3 matrices whose columns are the first two
    rotation columns and the translation of motions 1 and 2; the list holds
    the two mirror twins (sign of the third rows).  Empty when the scale
    constraint has no positive solution.
    """
    d = d / np.linalg.norm(d)
    if np.linalg.norm(d[18:24]) < 1e-8:
        raise BranchM31ZeroError("third-row blocks of the null vector vanish")
    # x/y slots of both third rows vanishing means both motions keep the
    # plane parallel to the reference pose; the scale constraints then
    # cannot pin the family down.  A vector with no outer-product content
    # either is the structural null direction the system always has and
    # self-rejects here.
    if np.max(np.abs(d[[18, 19, 21, 22]])) < 1e-6:
        if np.linalg.norm(d[:18]) < 0.1:
            return []
        raise RankAmbiguousError(
            "both plane motions keep the plane parallel to the reference "
            "pose; the motion family is not identifiable"
        )
    res = _eliminate_family(d)
    if res is None:
        return []
    m1, m2, n1, n2, lam1, lam2, t = res
    alpha = np.sqrt(t)
    n3 = d[18:21]
    m3 = d[21:24]

    m1f = m1 + lam1 * m3
    m2f = m2 + lam2 * m3
    n1f = n1 + lam1 * n3
    n2f = n2 + lam2 * n3
    out = []
    for sgn in (1.0, -1.0):
        m = np.vstack([m1f, m2f, sgn * alpha * m3])
        n = np.vstack([n1f, n2f, sgn * alpha * n3])
        out.append((m, n))
    return out


def _closest_rotation(g: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(g)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def _rows_to_pair(m: np.ndarray, n: np.ndarray, ortho_tol: float) -> PlanePosePair | None:
    """Build the pose pair from row matrices, or None when far from rigid."""
    poses = []
    for mat in (m, n):
        c1 = mat[:, 0]
        c2 = mat[:, 1]
        for col in (c1, c2):
            if abs(np.linalg.norm(col) - 1.0) > ortho_tol:
                return None
        if abs(c1 @ c2) > ortho_tol:
            return None
        frame = np.column_stack([c1, c2, np.cross(c1, c2)])
        poses.append(RigidPose(_closest_rotation(frame), mat[:, 2]))
    return PlanePosePair(poses[0], poses[1])


def lift_triples(pair: PlanePosePair, x0, x1, x2):
    """3D points of each triple under the candidate motions (pose-0 frame)."""
    n = len(x0)
    z = np.zeros((n, 1))
    p0 = np.hstack([np.asarray(x0, dtype=float), z])
    p1 = np.hstack([np.asarray(x1, dtype=float), z]) @ pair.pose1.rotation.T + pair.pose1.translation
    p2 = np.hstack([np.asarray(x2, dtype=float), z]) @ pair.pose2.rotation.T + pair.pose2.translation
    return p0, p1, p2


def collinearity_residual(pair: PlanePosePair, x0, x1, x2) -> float:
    """RMS sine of the bend angle at each lifted triple (0 for perfect fit)."""
    p0, p1, p2 = lift_triples(pair, x0, x1, x2)
    d1 = p1 - p0
    d2 = p2 - p0
    cross = np.cross(d1, d2)
    denom = np.linalg.norm(d1, axis=1) * np.linalg.norm(d2, axis=1)
    good = denom > 1e-12
    if not np.any(good):
        return np.inf
    sin = np.linalg.norm(cross[good], axis=1) / denom[good]
    return float(np.sqrt(np.mean(sin**2)))


def line_offset_residual(pair: PlanePosePair, x0, x1, x2) -> float:
    """RMS distance of each lifted pose-1 point from its pose-0/pose-2 line.

    Same units as the plane coordinates.  This is the quantity the
    geometric polish minimizes, so candidate ranking uses it as well.
    """
    p0, p1, p2 = lift_triples(pair, x0, x1, x2)
    base = p2 - p0
    length = np.linalg.norm(base, axis=1)
    good = length > 1e-12
    if not np.any(good):
        return np.inf
    off = np.cross(p1[good] - p0[good], base[good] / length[good][:, None])
    return float(np.sqrt(np.mean(np.sum(off**2, axis=1))))


def _skew(v: np.ndarray) -> np.ndarray:
    """Batched cross-product matrices: (n,3) -> (n,3,3)."""
    n = len(v)
    k = np.zeros((n, 3, 3))
    k[:, 0, 1] = -v[:, 2]
    k[:, 0, 2] = v[:, 1]
    k[:, 1, 0] = v[:, 2]
    k[:, 1, 2] = -v[:, 0]
    k[:, 2, 0] = -v[:, 1]
    k[:, 2, 1] = v[:, 0]
    return k


def _rotvec_matrix(r: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(r)
    if theta < 1e-12:
        k = np.array([[0, -r[2], r[1]], [r[2], 0, -r[0]], [-r[1], r[0], 0]])
        return np.eye(3) + k
    axis = r / theta
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def refine_plane_poses(
    pair: PlanePosePair, x0, x1, x2, max_iters: int = 25
) -> PlanePosePair:
    """Damped Gauss-Newton polish of a motion pair on the geometric residual.

    The residual per triple is the offset of the lifted pose-1 point from
    the line through the lifted pose-0 and pose-2 points (the longest
    baseline), which the algebraic nullspace solution only minimizes in a
    weighted algebraic sense.  Twelve parameters: a rotation increment and
    translation shift per motion.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    r1 = pair.pose1.rotation.copy()
    t1 = pair.pose1.translation.copy()
    r2 = pair.pose2.rotation.copy()
    t2 = pair.pose2.translation.copy()

    def residual_and_jacobian(r1, t1, r2, t2):
        cur = PlanePosePair(RigidPose(r1, t1), RigidPose(r2, t2))
        p0, p1, p2 = lift_triples(cur, x0, x1, x2)
        v = p1 - p0
        base = p2 - p0
        length = np.linalg.norm(base, axis=1)
        good = length > 1e-12
        length = np.where(good, length, 1.0)
        u = base / length[:, None]
        res = np.cross(v, u)
        res[~good] = 0.0
        # d res / d p1 = -[u]x ; d res / d p2 = [v]x (I - u u^T) / L
        du = -_skew(u)
        proj = (np.eye(3)[None, :, :] - u[:, :, None] * u[:, None, :]) / length[:, None, None]
        dv = np.einsum("nij,njk->nik", _skew(v), proj)
        dv[~good] = 0.0
        du[~good] = 0.0
        # d p / d rotvec (left increment) = -[p - t]x ; d p / d t = I
        dp1_dr = -_skew(p1 - t1)
        dp2_dr = -_skew(p2 - t2)
        jac = np.zeros((len(x0), 3, 12))
        jac[:, :, 0:3] = np.einsum("nij,njk->nik", du, dp1_dr)
        jac[:, :, 3:6] = du
        jac[:, :, 6:9] = np.einsum("nij,njk->nik", dv, dp2_dr)
        jac[:, :, 9:12] = dv
        return res.reshape(-1), jac.reshape(-1, 12)

    res, jac = residual_and_jacobian(r1, t1, r2, t2)
    cost = float(res @ res)
    lam = 1e-6
    for _ in range(max_iters):
        jtj = jac.T @ jac
        jtr = jac.T @ res
        step_ok = False
        for _attempt in range(12):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            r1n = _rotvec_matrix(delta[0:3]) @ r1
            t1n = t1 + delta[3:6]
            r2n = _rotvec_matrix(delta[6:9]) @ r2
            t2n = t2 + delta[9:12]
            res_n, jac_n = residual_and_jacobian(r1n, t1n, r2n, t2n)
            cost_n = float(res_n @ res_n)
            if cost_n < cost:
                r1, t1, r2, t2 = r1n, t1n, r2n, t2n
                res, jac = res_n, jac_n
                improvement = cost - cost_n
                cost = cost_n
                lam = max(lam * 0.3, 1e-12)
                step_ok = True
                break
            lam *= 10.0
        if not step_ok:
            break
        if improvement < 1e-15 * (cost + 1e-300):
            break
    return PlanePosePair(
        RigidPose(_closest_rotation(r1), t1), RigidPose(_closest_rotation(r2), t2)
    )


@dataclass(frozen=True)
class PoseSolution:
    """Ranked plane-motion candidates with solver diagnostics."""

    candidates: tuple[PlanePosePair, ...]
    residuals: np.ndarray  # RMS line-offset per candidate, mm
    gap_ratio: float
    ambiguous: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def best(self) -> PlanePosePair:
        return self.candidates[0]


def _family_key(pair: PlanePosePair) -> tuple:
    t1 = pair.pose1.translation
    t2 = pair.pose2.translation
    return tuple(np.round([t1[0], t1[1], abs(t1[2]), t2[0], t2[1], abs(t2[2])], 3))


def estimate_plane_poses(
    data: CorrespondenceSet,
    ortho_tol: float = 0.3,
    max_candidates: int = 8,
    polish: bool = True,
    min_gap: float = RANK_GAP_MIN,
) -> PoseSolution:
    """Recover the two plane motions from a correspondence set.

    Candidates are ranked by collinearity residual; mirror twins (identical
    residual, plane normal flipped) are both returned because only
    camera-side reasoning can tell them apart.  The ambiguous flag is set
    when two candidates from different twin families fit equally well
    (within 1 percent).  min_gap is the degeneracy threshold on the
    nullspace rank gap; heavy pixel noise shrinks the gap on healthy data,
    so noisy pipelines pass a smaller value than the strict default.
    """
    if len(data) < MIN_TRIPLES:
        raise TooFewCorrespondencesError(
            f"need at least {MIN_TRIPLES} triples, got {len(data)}"
        )
    coords = np.concatenate([data.x0.ravel(), data.x1.ravel(), data.x2.ravel()])
    scale = float(np.sqrt(np.mean(coords**2)))
    if scale <= 0:
        raise NoValidCandidateError("all plane coordinates are zero")
    x0 = data.x0 / scale
    x1 = data.x1 / scale
    x2 = data.x2 / scale

    e = build_design_matrix(x0, x1, x2)
    d1, d2, gap = nullspace_basis(e, min_gap=min_gap)
    directions = candidate_null_vectors(d1, d2)

    row_sets: list[tuple[np.ndarray, np.ndarray, bool]] = []
    branch_zero = 0
    for d in directions:
        try:
            for m, n in _factor_null_vector(d):
                row_sets.append((m, n, False))
        except BranchM31ZeroError:
            branch_zero += 1
    used_swap = False
    if not row_sets:
        for d in directions:
            try:
                for m, n in _factor_null_vector(_swap_roles(d)):
                    row_sets.append((n, m, True))
                    used_swap = True
            except BranchM31ZeroError:
                branch_zero += 1
    if not row_sets:
        if branch_zero == len(directions) and branch_zero > 0:
            raise BranchM31ZeroError(
                "third-row blocks vanish for every candidate direction"
            )
        raise NoRealAlphaError("no candidate direction admits a positive scale")

    scored: list[tuple[float, PlanePosePair]] = []
    for m, n, _swapped in row_sets:
        pair = _rows_to_pair(m, n, ortho_tol)
        if pair is None:
            continue
        scored.append((line_offset_residual(pair, x0, x1, x2), pair))
    if not scored:
        raise NoValidCandidateError(
            "no candidate factorization is close enough to a rigid motion"
        )
    scored.sort(key=lambda item: item[0])
    scored = scored[:max_candidates]

    # geometric polish of every candidate within reach of the best fit
    # (twins included; they converge to distinct, equally scored optima)
    if polish:
        cutoff = 100.0 * max(scored[0][0], 1e-12)
        polished: list[tuple[float, PlanePosePair]] = []
        for res, pair in scored:
            if res <= cutoff and len(polished) < 4:
                better = refine_plane_poses(pair, x0, x1, x2)
                polished.append((line_offset_residual(better, x0, x1, x2), better))
            else:
                polished.append((res, pair))
        scored = sorted(polished, key=lambda item: item[0])

    # ambiguity check on twin-deduplicated families
    families: dict[tuple, float] = {}
    for res, pair in scored:
        key = _family_key(pair)
        if key not in families:
            families[key] = res
    fam_res = sorted(families.values())
    ambiguous = len(fam_res) > 1 and fam_res[1] <= 1.01 * max(fam_res[0], 1e-300)

    candidates = tuple(
        PlanePosePair(
            RigidPose(p.pose1.rotation, scale * p.pose1.translation),
            RigidPose(p.pose2.rotation, scale * p.pose2.translation),
        )
        for _, p in scored
    )
    residuals = scale * np.array([r for r, _ in scored])
    return PoseSolution(
        candidates=candidates,
        residuals=residuals,
        gap_ratio=gap,
        ambiguous=ambiguous,
        diagnostics={
            "n_triples": len(data),
            "coordinate_scale": scale,
            "n_directions": len(directions),
            "n_row_sets": len(row_sets),
            "used_role_swap": used_swap,
        },
    )
