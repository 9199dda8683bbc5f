"""Seeded procedural underwater world and camera trajectory.

World frame: z points up, the water surface is the plane z = 0 and the
seabed is the plane z = ``seabed_depth`` (negative). The seabed patch spans
x in [0, world_extent[0]) and y in [0, world_extent[1]); suspended particles
fill the box between seabed and surface and wrap around it like a torus.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from . import rng

SURFACE_Z = 0.0

Waypoint = tuple  # (t, x, y, z, yaw, pitch)


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str, line: Optional[int] = None) -> None:
        self.field = field
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")


def default_waypoints(duration: float) -> tuple:
    # survey pass 2.5 m above the default seabed at ~1 m/s, camera tilted
    # down so the spotlight footprint sweeps the rocks; gentle yaw wobble
    d = float(duration)
    return (
        (0.0, 3.0, 9.0, -2.5, 0.0, -0.9),
        (d / 2, 3.0 + d / 2, 9.0 + 0.33 * d, -2.5, 0.12, -0.9),
        (d, 3.0 + d, 9.0 + 0.5 * d, -2.5, 0.0, -0.9),
    )


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 42
    world_extent: tuple = (20.0, 20.0)
    seabed_depth: float = -5.0
    seabed_albedo: float = 0.5
    rock_count: int = 25
    rock_radius_range: tuple = (0.2, 0.8)
    rock_albedo_range: tuple = (0.15, 0.9)
    particle_count: int = 5000
    particle_radius_base: float = 0.01
    particle_scale: float = 1.0
    particle_brightness_range: tuple = (0.05, 0.3)
    particle_drift: tuple = (0.05, 0.02, -0.01)
    particle_near_clip: float = 0.3
    attenuation_coeff: float = 0.4
    spotlight_power: float = 10.0
    spotlight_cone_deg: float = 60.0
    spotlight_falloff_exp: float = 1.0
    ambient_fraction: float = 0.001
    camera_waypoints: Optional[tuple] = None
    fov_deg: float = 70.0
    width: int = 1920
    height: int = 1080
    fps: float = 30.0
    duration: float = 10.0

    def __post_init__(self) -> None:
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("world_extent", tuple(float(v) for v in self.world_extent))
        set_("rock_radius_range", tuple(float(v) for v in self.rock_radius_range))
        set_("rock_albedo_range", tuple(float(v) for v in self.rock_albedo_range))
        set_("particle_brightness_range", tuple(float(v) for v in self.particle_brightness_range))
        set_("particle_drift", tuple(float(v) for v in self.particle_drift))
        if self.camera_waypoints is None:
            set_("camera_waypoints", default_waypoints(self.duration))
        else:
            set_(
                "camera_waypoints",
                tuple(tuple(float(v) for v in wp) for wp in self.camera_waypoints),
            )
        self.validate()

    def validate(self) -> None:
        def need(ok: bool, name: str, msg: str) -> None:
            if not ok:
                raise ConfigError(name, msg)

        need(isinstance(self.seed, int) and 0 <= self.seed < 2**64, "seed", "must be an unsigned 64-bit integer")
        need(len(self.world_extent) == 2 and min(self.world_extent) > 0, "world_extent", "needs two positive spans")
        need(self.seabed_depth < SURFACE_Z, "seabed_depth", "must be below the surface (negative)")
        need(0.0 <= self.seabed_albedo <= 1.0, "seabed_albedo", "must lie in [0, 1]")
        need(isinstance(self.rock_count, int) and 0 <= self.rock_count <= 65535, "rock_count", "must be an integer in [0, 65535]")
        rr, ar = self.rock_radius_range, self.rock_albedo_range
        need(len(rr) == 2 and 0 < rr[0] <= rr[1], "rock_radius_range", "need 0 < min <= max")
        need(len(ar) == 2 and 0.0 <= ar[0] <= ar[1] <= 1.0, "rock_albedo_range", "need 0 <= min <= max <= 1")
        need(isinstance(self.particle_count, int) and self.particle_count >= 0, "particle_count", "must be a non-negative integer")
        need(self.particle_radius_base > 0, "particle_radius_base", "must be > 0")
        need(self.particle_scale > 0, "particle_scale", "must be > 0")
        br = self.particle_brightness_range
        need(len(br) == 2 and 0.0 <= br[0] <= br[1] <= 1.0, "particle_brightness_range", "need 0 <= min <= max <= 1")
        need(len(self.particle_drift) == 3, "particle_drift", "needs three components")
        need(self.particle_near_clip > 0, "particle_near_clip", "must be > 0")
        need(self.attenuation_coeff >= 0, "attenuation_coeff", "must be >= 0")
        need(self.spotlight_power >= 0, "spotlight_power", "must be >= 0")
        need(0 < self.spotlight_cone_deg < 180, "spotlight_cone_deg", "must lie in (0, 180)")
        need(self.spotlight_falloff_exp >= 0, "spotlight_falloff_exp", "must be >= 0")
        need(self.ambient_fraction >= 0, "ambient_fraction", "must be >= 0")
        need(0 < self.fov_deg < 180, "fov_deg", "must lie in (0, 180)")
        need(isinstance(self.width, int) and self.width >= 16, "width", "must be an integer >= 16")
        need(isinstance(self.height, int) and self.height >= 16, "height", "must be an integer >= 16")
        need(self.fps > 0, "fps", "must be > 0")
        need(self.duration > 0, "duration", "must be > 0")
        wps = self.camera_waypoints
        need(len(wps) >= 1 and all(len(wp) == 6 for wp in wps), "camera_waypoints", "need (t, x, y, z, yaw, pitch) tuples")
        times = [wp[0] for wp in wps]
        need(all(a < b for a, b in zip(times, times[1:])), "camera_waypoints", "times must be strictly increasing")
        need(times[0] <= 0.0 and times[-1] >= self.duration, "camera_waypoints", "must cover [0, duration]")

    @property
    def n_frames(self) -> int:
        # frames sit at k / fps for k < n; the epsilon absorbs fps * duration round-off
        n = self.fps * self.duration
        return int(math.floor(n + 1e-9))

    @property
    def volume_min(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.seabed_depth])

    @property
    def volume_size(self) -> np.ndarray:
        return np.array([self.world_extent[0], self.world_extent[1], SURFACE_Z - self.seabed_depth])

    def field_names(self) -> list:
        return [f.name for f in fields(self)]


@dataclass(frozen=True)
class Rock:
    center: tuple
    radii: tuple
    albedo: float
    instance_id: int


@dataclass(frozen=True)
class Particle:
    position: tuple
    radius: float
    brightness: float


@dataclass(frozen=True, eq=False)
class ParticleField:
    """Structure-of-arrays particle storage (read-only numpy arrays)."""

    positions: np.ndarray  # (N, 3)
    radii: np.ndarray
    brightness: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.positions, self.radii, self.brightness):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.radii)

    def __getitem__(self, i: int) -> Particle:
        return Particle(tuple(self.positions[i].tolist()), float(self.radii[i]), float(self.brightness[i]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParticleField):
            return NotImplemented
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.radii, other.radii)
            and np.array_equal(self.brightness, other.brightness)
        )


@dataclass(frozen=True)
class Scene:
    rocks: tuple
    particles: ParticleField
    config: SceneConfig


@dataclass(frozen=True)
class CameraPose:
    """Camera position plus yaw (about +z, from +x) and pitch (up positive)."""

    position: tuple
    yaw: float
    pitch: float
    time: float = 0.0

    def basis(self) -> np.ndarray:
        """Rows are the camera right, down and forward axes in world coordinates."""
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        forward = np.array([cp * cy, cp * sy, sp])
        right = np.array([sy, -cy, 0.0])
        down = np.cross(forward, right)
        return np.stack([right, down, forward])

    @property
    def quaternion(self) -> tuple:
        # yaw about z then pitch about the (rotated) lateral axis; unit by construction
        hy, hp = self.yaw / 2, -self.pitch / 2
        w = math.cos(hy) * math.cos(hp)
        x = -math.sin(hy) * math.sin(hp)
        y = math.cos(hy) * math.sin(hp)
        z = math.sin(hy) * math.cos(hp)
        return (w, x, y, z)


def _wrap_angle(a: float) -> float:
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a < 0:
        a += 2 * math.pi
    return a - math.pi


def camera_pose_at(config: SceneConfig, t: float) -> CameraPose:
    """Interpolate the waypoint path at time ``t`` (seconds).

    Position is piecewise linear; yaw follows the shortest arc and pitch is
    linear. Waypoint times return the waypoint itself.
    """
    if not (0.0 <= t <= config.duration):
        raise ValueError(f"time {t} outside [0, {config.duration}]")
    wps = config.camera_waypoints
    times = [wp[0] for wp in wps]
    k = bisect.bisect_right(times, t) - 1
    if k >= 0 and times[k] == t:
        wp = wps[k]
        return CameraPose(tuple(wp[1:4]), wp[4], wp[5], t)
    a, b = wps[k], wps[k + 1]
    s = (t - a[0]) / (b[0] - a[0])
    pos = tuple(a[i] + (b[i] - a[i]) * s for i in (1, 2, 3))
    yaw = a[4] + _wrap_angle(b[4] - a[4]) * s
    pitch = a[5] + (b[5] - a[5]) * s
    return CameraPose(pos, yaw, pitch, t)


def generate_scene(config: SceneConfig) -> Scene:
    config.validate()
    seed = config.seed
    ex, ey = config.world_extent
    rmin, rmax = config.rock_radius_range
    amin, amax = config.rock_albedo_range

    rocks = []
    counters = np.arange(6)
    for i in range(config.rock_count):
        u = rng.uniform_array(seed, rng.stream_id(rng.DOMAIN_ROCK, i), counters).tolist()
        radii = tuple(rmin + (rmax - rmin) * v for v in u[2:5])
        center = (u[0] * ex, u[1] * ey, config.seabed_depth + radii[2])
        rocks.append(Rock(center, radii, amin + (amax - amin) * u[5], i + 1))

    n = config.particle_count
    streams = (np.uint64(rng.DOMAIN_PARTICLE) << np.uint64(40)) | np.arange(n, dtype=np.uint64)
    u = rng.uniform_array(seed, streams[:, None], np.arange(5)[None, :])
    positions = config.volume_min + u[:, :3] * config.volume_size
    jitter = 0.5 + u[:, 3]
    # scale applied last so radii at scale k are exactly k * radii at scale 1
    radii = (config.particle_radius_base * jitter) * config.particle_scale
    bmin, bmax = config.particle_brightness_range
    brightness = bmin + (bmax - bmin) * u[:, 4]
    return Scene(tuple(rocks), ParticleField(positions, radii, brightness), config)


def _wrap_positions(pos: np.ndarray, vmin: np.ndarray, size: np.ndarray) -> np.ndarray:
    rel = np.mod(pos - vmin, size)
    rel = np.where(rel >= size, rel - size, rel)
    return vmin + rel


def advect_particles(scene: Scene, dt: float) -> Scene:
    """Move every particle by ``particle_drift * dt`` with periodic wrap."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return scene
    cfg = scene.config
    moved = scene.particles.positions + np.asarray(cfg.particle_drift) * dt
    positions = _wrap_positions(moved, cfg.volume_min, cfg.volume_size)
    field_ = ParticleField(positions, scene.particles.radii, scene.particles.brightness)
    return replace(scene, particles=field_)


# -- text manifest ----------------------------------------------------------

def format_scene(scene: Scene) -> str:
    lines = [
        "# rock id cx cy cz rx ry rz albedo",
        "# particle x y z r b",
    ]
    for r in scene.rocks:
        vals = (*r.center, *r.radii, r.albedo)
        lines.append(f"rock {r.instance_id} " + " ".join(repr(float(v)) for v in vals))
    p = scene.particles
    for xyz, rad, b in zip(p.positions.tolist(), p.radii.tolist(), p.brightness.tolist()):
        lines.append("particle " + " ".join(repr(v) for v in (*xyz, rad, b)))
    return "\n".join(lines) + "\n"


def parse_scene(text: str, config: SceneConfig) -> Scene:
    rocks, pos, rad, bri = [], [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "rock" and len(parts) == 9:
                v = [float(s) for s in parts[2:]]
                rocks.append(Rock(tuple(v[0:3]), tuple(v[3:6]), v[6], int(parts[1])))
            elif parts[0] == "particle" and len(parts) == 6:
                v = [float(s) for s in parts[1:]]
                pos.append(v[0:3])
                rad.append(v[3])
                bri.append(v[4])
            else:
                raise ValueError("unrecognised record")
        except ValueError as exc:
            raise ValueError(f"scene manifest line {lineno}: {exc}") from None
    particles = ParticleField(
        np.array(pos, dtype=np.float64).reshape(-1, 3),
        np.array(rad, dtype=np.float64),
        np.array(bri, dtype=np.float64),
    )
    return Scene(tuple(rocks), particles, config)


def scene_with(config: SceneConfig, **changes) -> SceneConfig:
    """``dataclasses.replace`` that regenerates default waypoints on a duration change."""
    if "duration" in changes and "camera_waypoints" not in changes:
        if config.camera_waypoints == default_waypoints(config.duration):
            changes["camera_waypoints"] = None
    return replace(config, **changes)
