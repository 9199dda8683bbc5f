"""CPU ray caster: spotlight-only shading with exponential water attenuation.

Every pixel casts one ray through its center against the seabed plane and
the rock ellipsoids. The spotlight sits at the camera and points along the
optical axis, so light travels to the surface and back along the same ray
(path length ``2 * d``). Suspended particles are splatted afterwards as
additive disks; they brighten the image but never change the rock labels.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .scene import CameraPose, Scene, SceneConfig, advect_particles, camera_pose_at

_T_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class LuminanceFrame:
    width: int
    height: int
    timestamp: float
    pixels: np.ndarray  # (height, width) float32 linear radiance


@dataclass(frozen=True, eq=False)
class LabelMask:
    width: int
    height: int
    timestamp: float
    labels: np.ndarray  # (height, width) uint16 rock instance ids, 0 = background


@dataclass(frozen=True)
class GroundTruthBox:
    instance_id: int
    bbox: tuple  # (x_min, y_min, x_max, y_max), max exclusive
    pixel_area: int


def attenuate(intensity_in, coeff, distance):
    """Beer-Lambert decay ``I0 * exp(-coeff * distance)``."""
    return intensity_in * np.exp(-coeff * distance)


def focal_length(fov_deg: float, width: int) -> float:
    return (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)


def project(point, pose: CameraPose, fov_deg: float, width: int, height: int) -> Optional[tuple]:
    """Pinhole projection to continuous pixel coordinates, or None behind the camera.

    Pixel (i, j) covers [i, i+1) x [j, j+1); the principal point is
    (width/2, height/2).
    """
    v = np.asarray(point, dtype=np.float64) - np.asarray(pose.position)
    x, y, z = pose.basis() @ v
    if z <= 0:
        return None
    f = focal_length(fov_deg, width)
    return (width / 2.0 + f * x / z, height / 2.0 + f * y / z)


def min_visible_area(width: int, height: int) -> int:
    # 16 px at 320x240, scaled with pixel count
    return max(1, int(round(16 * width * height / (320 * 240))))


def _cone_falloff(cos_angle: np.ndarray, cfg: SceneConfig) -> np.ndarray:
    """1 on the spotlight axis, 0 at and beyond the cone edge, raised to the falloff exponent."""
    cos_half = math.cos(math.radians(cfg.spotlight_cone_deg) / 2.0)
    s = np.clip((cos_angle - cos_half) / (1.0 - cos_half), 0.0, 1.0)
    return s**cfg.spotlight_falloff_exp


def _illumination(cos_angle: np.ndarray, cfg: SceneConfig) -> np.ndarray:
    return cfg.spotlight_power * (_cone_falloff(cos_angle, cfg) + cfg.ambient_fraction)


def _ray_dirs(pose: CameraPose, cfg: SceneConfig, rows: slice) -> np.ndarray:
    f = focal_length(cfg.fov_deg, cfg.width)
    j = np.arange(cfg.height, dtype=np.float64)[rows]
    i = np.arange(cfg.width, dtype=np.float64)
    jj, ii = np.meshgrid(j, i, indexing="ij")
    cam = np.stack(
        [(ii + 0.5 - cfg.width / 2.0) / f, (jj + 0.5 - cfg.height / 2.0) / f, np.ones_like(ii)],
        axis=-1,
    ).reshape(-1, 3)
    cam /= np.linalg.norm(cam, axis=1, keepdims=True)
    return cam @ pose.basis()


def beam_mask(cfg: SceneConfig) -> np.ndarray:
    """Pixels whose ray lies strictly inside the spotlight cone.

    The light rides on the camera axis, so this footprint is the same
    image-space disk for every pose.
    """
    f = focal_length(cfg.fov_deg, cfg.width)
    jj, ii = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float64)
    x = (ii + 0.5 - cfg.width / 2.0) / f
    y = (jj + 0.5 - cfg.height / 2.0) / f
    cos_angle = 1.0 / np.sqrt(1.0 + x * x + y * y)
    return cos_angle > math.cos(math.radians(cfg.spotlight_cone_deg) / 2.0)


def _shade_rows(scene: Scene, pose: CameraPose, rows: slice):
    """Surface pass for a band of rows: (radiance, labels, hit distance) as flat arrays."""
    cfg = scene.config
    dirs = _ray_dirs(pose, cfg, rows)
    n = len(dirs)
    origin = np.asarray(pose.position, dtype=np.float64)

    t_best = np.full(n, np.inf)
    rock_idx = np.full(n, -1, dtype=np.int64)

    # seabed plane
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = np.where(dz < 0, (cfg.seabed_depth - origin[2]) / dz, np.inf)
    t_plane[~(t_plane > _T_EPS)] = np.inf
    t_best = t_plane.copy()

    for k, rock in enumerate(scene.rocks):
        c = np.asarray(rock.center)
        r = np.asarray(rock.radii)
        to_c = c - origin
        dist_c = float(np.linalg.norm(to_c))
        big = float(r.max())
        if dist_c > big:
            cand = np.nonzero(dirs @ (to_c / dist_c) >= math.sqrt(1.0 - (big / dist_c) ** 2))[0]
        else:
            cand = np.arange(n)
        if len(cand) == 0:
            continue
        oc = -to_c / r
        dr = dirs[cand] / r
        a = np.einsum("ij,ij->i", dr, dr)
        b = dr @ oc
        cc = oc @ oc - 1.0
        disc = b * b - a * cc
        hit = disc >= 0
        if not hit.any():
            continue
        cand, a, b, disc = cand[hit], a[hit], b[hit], disc[hit]
        sq = np.sqrt(disc)
        t1 = (-b - sq) / a
        t2 = (-b + sq) / a
        t = np.where(t1 > _T_EPS, t1, np.where(t2 > _T_EPS, t2, np.inf))
        closer = t < t_best[cand]
        t_best[cand[closer]] = t[closer]
        rock_idx[cand[closer]] = k

    radiance = np.zeros(n)
    labels = np.zeros(n, dtype=np.uint16)
    hit = np.isfinite(t_best)
    if hit.any():
        d = dirs[hit]
        t = t_best[hit]
        ridx = rock_idx[hit]
        normals = np.zeros_like(d)
        normals[:, 2] = 1.0
        albedo = np.full(len(t), cfg.seabed_albedo)
        on_rock = ridx >= 0
        if on_rock.any() and scene.rocks:
            centers = np.array([rk.center for rk in scene.rocks])
            radii = np.array([rk.radii for rk in scene.rocks])
            albedos = np.array([rk.albedo for rk in scene.rocks])
            ids = np.array([rk.instance_id for rk in scene.rocks], dtype=np.uint16)
            rr = ridx[on_rock]
            p = origin + d[on_rock] * t[on_rock, None]
            nrm = (p - centers[rr]) / radii[rr] ** 2
            normals[on_rock] = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
            albedo[on_rock] = albedos[rr]
            hit_labels = np.zeros(len(t), dtype=np.uint16)
            hit_labels[on_rock] = ids[rr]
            labels[hit] = hit_labels
        cos_surface = np.maximum(0.0, -np.einsum("ij,ij->i", normals, d))
        cos_axis = d @ pose.basis()[2]
        radiance[hit] = attenuate(
            _illumination(cos_axis, cfg) * cos_surface * albedo, cfg.attenuation_coeff, 2.0 * t
        )
    return radiance, labels, t_best


def _splat_particles(image: np.ndarray, depth: np.ndarray, scene: Scene, pose: CameraPose) -> None:
    """Add particle disks into ``image`` (float64, modified in place)."""
    cfg = scene.config
    parts = scene.particles
    if len(parts) == 0:
        return
    h, w = image.shape
    f = focal_length(cfg.fov_deg, cfg.width)
    rel = parts.positions - np.asarray(pose.position)
    cam = rel @ pose.basis().T
    z = cam[:, 2]
    keep = np.nonzero(z > cfg.particle_near_clip)[0]
    if len(keep) == 0:
        return
    cam, z = cam[keep], z[keep]
    u = w / 2.0 + f * cam[:, 0] / z
    v = h / 2.0 + f * cam[:, 1] / z
    r_px = f * parts.radii[keep] / z
    inside = (u + r_px + 1 > 0) & (u - r_px - 1 < w) & (v + r_px + 1 > 0) & (v - r_px - 1 < h)
    keep, cam, z, u, v, r_px = keep[inside], cam[inside], z[inside], u[inside], v[inside], r_px[inside]
    dist = np.linalg.norm(cam, axis=1)

    ci = np.floor(u).astype(np.int64)
    cj = np.floor(v).astype(np.int64)
    center_in = (ci >= 0) & (ci < w) & (cj >= 0) & (cj < h)
    # a particle whose center pixel sees a nearer surface is hidden behind it
    surface = np.full(len(keep), np.inf)
    surface[center_in] = depth[cj[center_in], ci[center_in]]
    visible = dist < surface
    if not visible.any():
        return
    sel = np.nonzero(visible)[0]
    keep, z, u, v, r_px, dist, ci, cj, center_in = (
        a[sel] for a in (keep, z, u, v, r_px, dist, ci, cj, center_in)
    )
    value = attenuate(
        _illumination(z / dist, cfg) * parts.brightness[keep], cfg.attenuation_coeff, 2.0 * dist
    )

    # front-to-back, ties by particle index
    order = np.lexsort((keep, dist))
    u, v, r_px, ci, cj, center_in, value = (a[order] for a in (u, v, r_px, ci, cj, center_in, value))
    flat = image.reshape(-1)

    small = (r_px < 0.5) & center_in
    if small.any():
        np.add.at(flat, cj[small] * w + ci[small], value[small] * math.pi * r_px[small] ** 2)

    large = r_px >= 0.5
    if not large.any():
        return
    half = np.ceil(r_px[large] + 0.5).astype(np.int64)
    lu, lv, lr, lci, lcj, lval = u[large], v[large], r_px[large], ci[large], cj[large], value[large]
    for k in np.unique(half):
        g = half == k
        off = np.arange(-k, k + 1)
        dy, dx = np.meshgrid(off, off, indexing="ij")
        px = lci[g, None] + dx.reshape(1, -1)
        py = lcj[g, None] + dy.reshape(1, -1)
        d = np.hypot(px + 0.5 - lu[g, None], py + 0.5 - lv[g, None])
        cover = np.clip(lr[g, None] + 0.5 - d, 0.0, 1.0)
        ok = (cover > 0) & (px >= 0) & (px < w) & (py >= 0) & (py < h)
        contrib = lval[g, None] * cover
        np.add.at(flat, (py * w + px)[ok], contrib[ok])


def row_bands(height: int, workers: int) -> list:
    workers = max(1, min(workers, height))
    edges = np.linspace(0, height, workers + 1).round().astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def render_frame(scene: Scene, pose: CameraPose, workers: int = 1) -> tuple:
    """Render one luminance frame and its rock label mask.

    Row bands may be shaded on several threads; every pixel is computed
    independently, so the result does not depend on ``workers``.
    """
    cfg = scene.config
    h, w = cfg.height, cfg.width
    bands = row_bands(h, workers)
    if len(bands) == 1:
        results = [_shade_rows(scene, pose, bands[0])]
    else:
        with ThreadPoolExecutor(len(bands)) as ex:
            results = list(ex.map(lambda rows: _shade_rows(scene, pose, rows), bands))
    radiance = np.concatenate([r[0] for r in results]).reshape(h, w)
    labels = np.concatenate([r[1] for r in results]).reshape(h, w)
    depth = np.concatenate([r[2] for r in results]).reshape(h, w)
    _splat_particles(radiance, depth, scene, pose)
    frame = LuminanceFrame(w, h, pose.time, radiance.astype(np.float32))
    mask = LabelMask(w, h, pose.time, labels)
    return frame, mask


def mask_to_boxes(mask: LabelMask, min_visible_area: int) -> list:
    labels = mask.labels
    if not labels.any():
        return []
    areas = np.bincount(labels.ravel())
    boxes = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or idx >= len(areas) or areas[idx] < min_visible_area:
            continue
        ys, xs = sl
        boxes.append(GroundTruthBox(idx, (xs.start, ys.start, xs.stop, ys.stop), int(areas[idx])))
    return boxes


def frame_times(config: SceneConfig) -> list:
    n = config.n_frames
    if n < 2:
        raise ValueError("need at least 2 frames")
    return [k / config.fps for k in range(n)]


def scene_at(scene: Scene, t: float) -> Scene:
    return advect_particles(scene, t)


def render_sequence(scene: Scene, config: Optional[SceneConfig] = None, workers: int = 1) -> list:
    """Frames at t = k / fps with the camera on its path and particles drifted to t."""
    config = config or scene.config
    out = []
    for t in frame_times(config):
        pose = camera_pose_at(config, t)
        out.append(render_frame(scene_at(scene, t), pose, workers=workers))
    return out


def tone_map(frame: LuminanceFrame, exposure: float) -> np.ndarray:
    """8-bit preview: linear scale by ``exposure`` then clamp to [0, 255]."""
    return np.clip(np.floor(frame.pixels.astype(np.float64) * exposure + 0.5), 0, 255).astype(np.uint8)
