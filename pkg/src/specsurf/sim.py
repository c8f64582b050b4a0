"""Synthetic scene generator: ray-traced reflection correspondences.

The simulator builds ground-truth data for the estimation pipeline.  A pixel
ray is cast from the camera, reflected once off the nearest analytic mirror
(law of reflection), and the reflected ray is intersected with the reference
plane at each of its three poses.  The three in-plane hit coordinates form
one reflection correspondence; the mirror point and its normal are kept as
ground truth.

World frame == plane frame at pose 0 (the plane is z=0 there, extent
``[-half_width, half_width] x [-half_height, half_height]``).  Units: mm.

Noise model (applied by generate_dataset, in this order):
  1. Gaussian sigma_mm on every in-plane coordinate of x0, x1, x2;
  2. radial distortion k1 on pixel coordinates (in [-1,1]-normalized form);
  3. uniform quantization noise gamma_px on pixel coordinates.
Each triple draws from its own RNG stream seeded by (seed, full-grid pixel
index), so dropping pixels or parallelizing never changes the noise of the
surviving ones.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError, ParseError, SchemaMismatchError
from .types import CorrespondenceSet, Intrinsics, NoiseSpec, ReflectionTriple, RigidPose

# reflected rays must travel at least this far before counting a hit (mm);
# suppresses self-intersection at the reflection point
_MIN_TRAVEL = 1e-6

SCENE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SphereMirror:
    center: np.ndarray  # (3,) mm
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class ParaboloidMirror:
    """Paraboloid of revolution: axial_dist = radial_dist^2 / (4*focal)."""

    vertex: np.ndarray  # (3,) mm
    axis: np.ndarray  # (3,) unit, pointing into the bowl opening
    focal: float

    def __post_init__(self):
        object.__setattr__(self, "vertex", np.asarray(self.vertex, dtype=float).reshape(3))
        ax = np.asarray(self.axis, dtype=float).reshape(3)
        n = float(np.sqrt(ax @ ax))
        if n == 0:
            raise ValueError("paraboloid axis must be nonzero")
        object.__setattr__(self, "axis", ax / n)
        if not self.focal > 0:
            raise ValueError("paraboloid focal parameter must be positive")


@dataclass(frozen=True)
class MirrorScene:
    """Full synthetic setup: camera, mirrors, plane extent and poses."""

    intrinsics: Intrinsics
    camera_pose: RigidPose  # world -> camera
    image_size: tuple[int, int]  # (width, height) pixels
    plane_half_extent: tuple[float, float]  # (half_width, half_height) mm
    pose1: RigidPose  # plane local -> world, pose 1
    pose2: RigidPose  # plane local -> world, pose 2
    mirrors: tuple[SphereMirror | ParaboloidMirror, ...]

    def __post_init__(self):
        for pose in (self.camera_pose, self.pose1, self.pose2):
            if pose.orthonormality_error() > 1e-12 or np.linalg.det(pose.rotation) < 0:
                raise ValueError("scene rotations must be proper and orthonormal")
        if min(self.plane_half_extent) <= 0:
            raise ValueError("plane extent must be positive")
        if not self.mirrors:
            raise ValueError("scene needs at least one mirror")

    def camera_center(self) -> np.ndarray:
        return self.camera_pose.inverse().translation


def rotation_about_axis(axis, angle_deg: float) -> np.ndarray:
    """Rotation matrix for a right-handed turn about a (not nec. unit) axis."""
    ax = np.asarray(axis, dtype=float).reshape(3)
    ax = ax / np.linalg.norm(ax)
    th = np.deg2rad(angle_deg)
    k = np.array(
        [[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]]
    )
    return np.eye(3) + np.sin(th) * k + (1.0 - np.cos(th)) * (k @ k)


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """World-to-camera pose with the optical axis through the target."""
    eye = np.asarray(eye, dtype=float).reshape(3)
    fwd = np.asarray(target, dtype=float).reshape(3) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("look_at_pose: view direction parallel to up vector")
    right /= nr
    down = np.cross(fwd, right)
    r = np.vstack([right, down, fwd])
    return RigidPose(r, -r @ eye)


# ---------------------------------------------------------------------------
# intersection helpers (all batched over n rays; origin may be (3,) or (n,3))


def _sphere_hit(origin, dirs, sphere: SphereMirror):
    """Nearest positive hit parameter per ray, inf where missed."""
    oc = sphere.center - origin  # (n,3) via broadcast
    b = np.sum(oc * dirs, axis=-1)
    c = np.sum(oc * oc, axis=-1) - sphere.radius * sphere.radius
    disc = b * b - c
    t = np.full(dirs.shape[:-1], np.inf)
    ok = disc >= 0.0
    root = np.sqrt(np.where(ok, disc, 0.0))
    t_near = b - root
    t_far = b + root
    # prefer the near root, fall back to the far one when inside/edge-on
    near_ok = ok & (t_near > _MIN_TRAVEL)
    far_ok = ok & ~near_ok & (t_far > _MIN_TRAVEL)
    t[near_ok] = t_near[near_ok]
    t[far_ok] = t_far[far_ok]
    return t


def _paraboloid_hit(origin, dirs, par: ParaboloidMirror):
    w = origin - par.vertex
    wa = np.sum(w * par.axis, axis=-1)
    da = np.sum(dirs * par.axis, axis=-1)
    w_perp = w - wa[..., None] * par.axis
    d_perp = dirs - da[..., None] * par.axis
    a = np.sum(d_perp * d_perp, axis=-1)
    b = 2.0 * (np.sum(w_perp * d_perp, axis=-1) - 2.0 * par.focal * da)
    c = np.sum(w_perp * w_perp, axis=-1) - 4.0 * par.focal * wa
    t = np.full(dirs.shape[:-1], np.inf)
    quad = np.abs(a) > 1e-14
    # linear case (ray parallel to axis)
    lin = ~quad & (np.abs(b) > 1e-14)
    t_lin = np.where(lin, -c / np.where(lin, b, 1.0), np.inf)
    t[lin & (t_lin > _MIN_TRAVEL)] = t_lin[lin & (t_lin > _MIN_TRAVEL)]
    disc = b * b - 4.0 * a * c
    ok = quad & (disc >= 0.0)
    root = np.sqrt(np.where(ok, disc, 0.0))
    denom = np.where(quad, 2.0 * a, 1.0)
    t1 = np.where(ok, (-b - root) / denom, np.inf)
    t2 = np.where(ok, (-b + root) / denom, np.inf)
    t_near = np.minimum(t1, t2)
    t_far = np.maximum(t1, t2)
    near_ok = ok & (t_near > _MIN_TRAVEL)
    far_ok = ok & ~near_ok & (t_far > _MIN_TRAVEL)
    t[near_ok] = t_near[near_ok]
    t[far_ok] = t_far[far_ok]
    return t


def _mirror_hit(origin, dirs, mirror):
    if isinstance(mirror, SphereMirror):
        return _sphere_hit(origin, dirs, mirror)
    return _paraboloid_hit(origin, dirs, mirror)


def _mirror_normal(points, mirror):
    """Outward unit normal at surface points (n,3)."""
    if isinstance(mirror, SphereMirror):
        n = (points - mirror.center) / mirror.radius
    else:
        w = points - mirror.vertex
        wa = np.sum(w * mirror.axis, axis=-1)
        w_perp = w - wa[..., None] * mirror.axis
        n = 2.0 * w_perp - 4.0 * mirror.focal * mirror.axis
        norm = np.sqrt(np.sum(n * n, axis=-1))
        n = n / norm[..., None]
    return n


def _plane_pose_list(scene: MirrorScene) -> list[RigidPose]:
    return [
        RigidPose(np.eye(3), np.zeros(3)),
        scene.pose1,
        scene.pose2,
    ]


def trace_pixels(scene: MirrorScene, pixels: np.ndarray):
    """Trace a batch of pixels; returns (valid, x0, x1, x2, points, normals).

    valid is a boolean mask over the input rows; the per-pose in-plane
    coordinates and the ground-truth surface data are NaN where invalid.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(pixels)
    intr = scene.intrinsics
    cam_r = scene.camera_pose.rotation
    center = scene.camera_center()
    # rays that miss produce inf/NaN intermediates by design; they are
    # masked out at the end, so arithmetic warnings are suppressed here
    with np.errstate(invalid="ignore", divide="ignore"):
        return _trace_pixels_impl(scene, pixels, n, intr, cam_r, center)


def _trace_pixels_impl(scene, pixels, n, intr, cam_r, center):

    d_cam = np.stack(
        [
            (pixels[:, 0] - intr.u0) / intr.fx,
            (pixels[:, 1] - intr.v0) / intr.fy,
            np.ones(n),
        ],
        axis=-1,
    )
    d_world = d_cam @ cam_r  # == R^T @ d per row
    norm = np.sqrt(np.sum(d_world * d_world, axis=-1))
    d_world = d_world / norm[:, None]

    # nearest mirror hit along each primary ray
    t_best = np.full(n, np.inf)
    which = np.full(n, -1)
    for mi, mirror in enumerate(scene.mirrors):
        t = _mirror_hit(center, d_world, mirror)
        closer = t < t_best
        t_best[closer] = t[closer]
        which[closer] = mi

    valid = np.isfinite(t_best)
    points = center + t_best[:, None] * d_world
    normals = np.full((n, 3), np.nan)
    for mi, mirror in enumerate(scene.mirrors):
        sel = valid & (which == mi)
        if np.any(sel):
            normals[sel] = _mirror_normal(points[sel], mirror)

    # law of reflection (normals face the incoming ray for our convex mirrors)
    dn = np.sum(d_world * normals, axis=-1)
    valid &= dn < 0.0
    reflected = d_world - 2.0 * dn[:, None] * normals

    # single-bounce contract: reflected rays that re-enter a mirror are
    # dropped once the re-hit happens before the farthest plane intersection
    t_rehit = np.full(n, np.inf)
    for mirror in scene.mirrors:
        t = _mirror_hit(points, reflected, mirror)
        t_rehit = np.minimum(t_rehit, t)

    hw, hh = scene.plane_half_extent
    coords = []
    for pose in _plane_pose_list(scene):
        pn = pose.rotation[:, 2]  # plane normal in world coords
        denom = np.sum(reflected * pn, axis=-1)
        offset = pose.translation - points
        t_plane = np.where(
            np.abs(denom) > 1e-12, np.sum(offset * pn, axis=-1) / np.where(np.abs(denom) > 1e-12, denom, 1.0), np.inf
        )
        hit_ok = np.isfinite(t_plane) & (t_plane > _MIN_TRAVEL) & (t_plane < t_rehit)
        world = points + t_plane[:, None] * reflected
        local = (world - pose.translation) @ pose.rotation
        hit_ok &= (np.abs(local[:, 0]) <= hw) & (np.abs(local[:, 1]) <= hh)
        valid &= hit_ok
        coords.append(local[:, :2])

    x0, x1, x2 = coords
    for arr in (x0, x1, x2):
        arr[~valid] = np.nan
    points = np.where(valid[:, None], points, np.nan)
    normals = np.where(valid[:, None], normals, np.nan)
    return valid, x0, x1, x2, points, normals


def trace_reflection(scene: MirrorScene, pixel) -> ReflectionTriple | None:
    """Trace one pixel; None when the pixel yields no valid correspondence."""
    pixel = np.asarray(pixel, dtype=float).reshape(2)
    w, h = scene.image_size
    if not (0 <= pixel[0] < w and 0 <= pixel[1] < h):
        raise ValueError("pixel outside image bounds")
    valid, x0, x1, x2, points, normals = trace_pixels(scene, pixel[None, :])
    if not valid[0]:
        return None
    return ReflectionTriple(
        pixel=pixel,
        x0=x0[0],
        x1=x1[0],
        x2=x2[0],
        gt_point=points[0],
        gt_normal=normals[0],
    )


def apply_radial_distortion(p, k1: float) -> np.ndarray:
    """One-parameter radial model on [-1,1]-normalized points: p*(1+k1*r^2)."""
    p = np.asarray(p, dtype=float)
    r2 = np.sum(p * p, axis=-1, keepdims=True)
    return p * (1.0 + k1 * r2)


def _distort_pixels(pixels: np.ndarray, k1: float, intr: Intrinsics, image_size) -> np.ndarray:
    """Distort pixel coordinates via the normalized-coordinate model."""
    if k1 == 0.0:
        return pixels
    w, h = image_size
    scale = np.array([w / 2.0, h / 2.0])
    centre = np.array([intr.u0, intr.v0])
    normalized = (pixels - centre) / scale
    return apply_radial_distortion(normalized, k1) * scale + centre


def grid_pixels(image_size, grid_step: int):
    """Row-major sampling grid over the image; returns (n,2) pixel coords."""
    w, h = image_size
    us = np.arange(0, w, grid_step, dtype=float)
    vs = np.arange(0, h, grid_step, dtype=float)
    uu, vv = np.meshgrid(us, vs)
    return np.stack([uu.ravel(), vv.ravel()], axis=-1)


def generate_dataset(
    scene: MirrorScene,
    grid_step: int,
    noise: NoiseSpec,
    keep_ground_truth: bool = True,
) -> CorrespondenceSet:
    """Trace a pixel grid and apply the noise model.

    Ground truth (surface points/normals, exact poses, camera) is stored in
    the returned set but never perturbed.  Raises EmptyDatasetError when
    fewer than 12 pixels produce valid triples (the pose solver minimum).
    """
    if grid_step < 1:
        raise ValueError("grid_step must be >= 1")
    pixels = grid_pixels(scene.image_size, grid_step)
    valid, x0, x1, x2, points, normals = trace_pixels(scene, pixels)
    idx = np.nonzero(valid)[0]
    if idx.size < 12:
        raise EmptyDatasetError(
            f"only {idx.size} valid triples (< 12); adjust scene or grid"
        )

    pix = pixels[idx]
    x0, x1, x2 = x0[idx], x1[idx], x2[idx]

    # per-triple streams keyed by (seed, index in the full grid)
    plane_noise = np.zeros((idx.size, 6))
    pixel_noise = np.zeros((idx.size, 2))
    for row, grid_index in enumerate(idx):
        stream = np.random.default_rng([noise.seed, int(grid_index)])
        plane_noise[row] = stream.normal(0.0, 1.0, size=6)
        pixel_noise[row] = stream.uniform(-1.0, 1.0, size=2)

    x0 = x0 + noise.sigma_mm * plane_noise[:, 0:2]
    x1 = x1 + noise.sigma_mm * plane_noise[:, 2:4]
    x2 = x2 + noise.sigma_mm * plane_noise[:, 4:6]
    pix = _distort_pixels(pix, noise.k1, scene.intrinsics, scene.image_size)
    pix = pix + noise.gamma_px * pixel_noise

    meta = {
        "format_version": 1,
        "units": "mm,px",
        "image_size": scene.image_size,
        "plane_half_extent": scene.plane_half_extent,
        "grid_step": grid_step,
        "sigma_mm": noise.sigma_mm,
        "gamma_px": noise.gamma_px,
        "k1": noise.k1,
        "seed": noise.seed,
        "gt_intrinsics": scene.intrinsics,
        "gt_camera_pose": scene.camera_pose,
        "gt_pose1": scene.pose1,
        "gt_pose2": scene.pose2,
    }
    return CorrespondenceSet(
        pixels=pix,
        x0=x0,
        x1=x1,
        x2=x2,
        gt_points=points[idx] if keep_ground_truth else None,
        gt_normals=normals[idx] if keep_ground_truth else None,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# default scene and scene files


def default_two_sphere_scene() -> MirrorScene:
    """Reference layout: two 300 mm spheres over a 2000x2000 mm plane.

    Camera focal length 1400 px on a 1280x960 image, matching the synthetic
    scale used throughout the test suite.  Tuned so that a 100x100 pixel
    grid yields well over 1000 valid triples.
    """
    intr = Intrinsics(fx=1400.0, fy=1400.0, u0=639.5, v0=479.5)
    camera = look_at_pose(eye=(0.0, -1000.0, 750.0), target=(0.0, 0.0, 850.0))
    pose1 = RigidPose(
        rotation_about_axis((1.0, 0.0, 0.0), -10.0)
        @ rotation_about_axis((0.0, 1.0, 0.0), 6.0)
        @ rotation_about_axis((0.0, 0.0, 1.0), 8.0),
        (40.0, -60.0, 170.0),
    )
    pose2 = RigidPose(
        rotation_about_axis((1.0, 0.0, 0.0), 8.0)
        @ rotation_about_axis((0.0, 1.0, 0.0), -12.0)
        @ rotation_about_axis((0.0, 0.0, 1.0), -10.0),
        (-70.0, 80.0, 345.0),
    )
    mirrors = (
        SphereMirror(center=(-340.0, 0.0, 850.0), radius=300.0),
        SphereMirror(center=(340.0, 0.0, 850.0), radius=300.0),
    )
    return MirrorScene(
        intrinsics=intr,
        camera_pose=camera,
        image_size=(1280, 960),
        plane_half_extent=(1000.0, 1000.0),
        pose1=pose1,
        pose2=pose2,
        mirrors=mirrors,
    )


def pure_translation_scene(dz1: float = 170.0, dz2: float = 345.0) -> MirrorScene:
    """Degenerate variant: the plane only translates between poses."""
    base = default_two_sphere_scene()
    return MirrorScene(
        intrinsics=base.intrinsics,
        camera_pose=base.camera_pose,
        image_size=base.image_size,
        plane_half_extent=base.plane_half_extent,
        pose1=RigidPose(np.eye(3), (25.0, -30.0, dz1)),
        pose2=RigidPose(np.eye(3), (-40.0, 45.0, dz2)),
        mirrors=base.mirrors,
    )


def _fmt_floats(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.asarray(values).ravel())


def _parse_floats(text: str, count: int, what: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != count:
        raise SchemaMismatchError(f"{what}: expected {count} numbers, got {len(parts)}")
    return np.array([float(p) for p in parts])


def _pose_to_section(cfg, name: str, pose: RigidPose):
    cfg[name] = {
        "rotation": _fmt_floats(pose.rotation),
        "translation": _fmt_floats(pose.translation),
    }


def _pose_from_section(section, what: str) -> RigidPose:
    r = _parse_floats(section["rotation"], 9, f"{what}.rotation").reshape(3, 3)
    t = _parse_floats(section["translation"], 3, f"{what}.translation")
    return RigidPose(r, t)


def write_scene(scene: MirrorScene, path):
    """Write the INI-style scene description (schema version 1)."""
    cfg = configparser.ConfigParser()
    cfg["scene"] = {"format_version": str(SCENE_FORMAT_VERSION)}
    cfg["camera"] = {
        "fx": _fmt_floats([scene.intrinsics.fx]),
        "fy": _fmt_floats([scene.intrinsics.fy]),
        "u0": _fmt_floats([scene.intrinsics.u0]),
        "v0": _fmt_floats([scene.intrinsics.v0]),
        "width": str(scene.image_size[0]),
        "height": str(scene.image_size[1]),
        "rotation": _fmt_floats(scene.camera_pose.rotation),
        "translation": _fmt_floats(scene.camera_pose.translation),
    }
    cfg["plane"] = {
        "half_width": _fmt_floats([scene.plane_half_extent[0]]),
        "half_height": _fmt_floats([scene.plane_half_extent[1]]),
    }
    _pose_to_section(cfg, "pose1", scene.pose1)
    _pose_to_section(cfg, "pose2", scene.pose2)
    for i, mirror in enumerate(scene.mirrors, start=1):
        name = f"mirror{i}"
        if isinstance(mirror, SphereMirror):
            cfg[name] = {
                "type": "sphere",
                "center": _fmt_floats(mirror.center),
                "radius": _fmt_floats([mirror.radius]),
            }
        else:
            cfg[name] = {
                "type": "paraboloid",
                "vertex": _fmt_floats(mirror.vertex),
                "axis": _fmt_floats(mirror.axis),
                "focal": _fmt_floats([mirror.focal]),
            }
    with open(path, "w", newline="\n") as fh:
        cfg.write(fh)


def read_scene(path) -> MirrorScene:
    """Parse a scene description written by write_scene."""
    cfg = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cfg.read_file(fh)
    except configparser.Error as exc:
        raise ParseError(f"scene file: {exc}") from exc
    try:
        version = int(cfg["scene"]["format_version"])
        if version != SCENE_FORMAT_VERSION:
            raise SchemaMismatchError(f"unsupported scene format_version {version}")
        cam = cfg["camera"]
        intr = Intrinsics(
            fx=float(cam["fx"]), fy=float(cam["fy"]),
            u0=float(cam["u0"]), v0=float(cam["v0"]),
        )
        camera_pose = _pose_from_section(cam, "camera")
        image_size = (int(cam["width"]), int(cam["height"]))
        plane = cfg["plane"]
        extent = (float(plane["half_width"]), float(plane["half_height"]))
        pose1 = _pose_from_section(cfg["pose1"], "pose1")
        pose2 = _pose_from_section(cfg["pose2"], "pose2")
        mirrors = []
        i = 1
        while cfg.has_section(f"mirror{i}"):
            sec = cfg[f"mirror{i}"]
            kind = sec["type"].strip().lower()
            if kind == "sphere":
                mirrors.append(
                    SphereMirror(
                        center=_parse_floats(sec["center"], 3, "mirror.center"),
                        radius=float(sec["radius"]),
                    )
                )
            elif kind == "paraboloid":
                mirrors.append(
                    ParaboloidMirror(
                        vertex=_parse_floats(sec["vertex"], 3, "mirror.vertex"),
                        axis=_parse_floats(sec["axis"], 3, "mirror.axis"),
                        focal=float(sec["focal"]),
                    )
                )
            else:
                raise SchemaMismatchError(f"unknown mirror type {sec['type']!r}")
            i += 1
        if not mirrors:
            raise SchemaMismatchError("scene file defines no mirror sections")
    except KeyError as exc:
        raise SchemaMismatchError(f"scene file missing key/section: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"scene file: {exc}") from exc
    try:
        return MirrorScene(
            intrinsics=intr,
            camera_pose=camera_pose,
            image_size=image_size,
            plane_half_extent=extent,
            pose1=pose1,
            pose2=pose2,
            mirrors=tuple(mirrors),
        )
    except ValueError as exc:
        raise ParseError(f"scene file: {exc}") from exc
