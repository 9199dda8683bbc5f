"""Flat ``key = value`` run configuration.

One pair per line, ``#`` starts a comment. Values are Python-style
literals: numbers, ``True``/``False``, ``None`` and tuples. Tuple-valued
keys also accept lists.
A list of tuples is written comma separated on one line, e.g.::

    camera_waypoints = (0, 3, 9, -2.5, 0, -0.9), (3, 6, 10.5, -2.5, 0, -0.9)

Keys are the field names of :class:`SceneConfig`, :class:`DvsParams` and
:class:`PipelineOptions`. Unknown or repeated keys are errors.
"""
from __future__ import annotations

import ast
import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .events import DvsParams
from .scene import ConfigError, SceneConfig, scene_with


@dataclass(frozen=True)
class PipelineOptions:
    window_us: int = 33333
    density_threshold: float = 1.0
    min_area: int = 16
    iou_threshold: float = 0.5
    min_visible_area: Optional[int] = None  # None: scaled from 16 px at 320x240
    gt_in_beam: bool = True  # ground truth only where the spotlight reaches
    split_ratio: float = 0.5
    split_seed: int = 0
    gain: float = 64.0
    exposure: float = 400.0

    def __post_init__(self) -> None:
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(isinstance(self.window_us, int) and self.window_us > 0, "window_us", "must be a positive integer")
        need(self.density_threshold > 0, "density_threshold", "must be > 0")
        need(isinstance(self.min_area, int) and self.min_area >= 1, "min_area", "must be an integer >= 1")
        need(0.0 < self.iou_threshold <= 1.0, "iou_threshold", "must lie in (0, 1]")
        need(self.min_visible_area is None or (isinstance(self.min_visible_area, int) and self.min_visible_area >= 1),
             "min_visible_area", "must be None or an integer >= 1")
        need(isinstance(self.gt_in_beam, bool), "gt_in_beam", "must be True or False")
        need(0.0 <= self.split_ratio <= 1.0, "split_ratio", "must lie in [0, 1]")
        need(isinstance(self.split_seed, int) and self.split_seed >= 0, "split_seed", "must be a non-negative integer")
        need(self.gain > 0, "gain", "must be > 0")
        need(self.exposure > 0, "exposure", "must be > 0")


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = SceneConfig()
    dvs: DvsParams = DvsParams()
    options: PipelineOptions = PipelineOptions()

    def with_scene(self, **changes) -> "RunConfig":
        return replace(self, scene=scene_with(self.scene, **changes))


_SECTIONS = (("scene", SceneConfig), ("dvs", DvsParams), ("options", PipelineOptions))
_OWNER = {f.name: (section, cls, f) for section, cls in _SECTIONS for f in fields(cls)}
_TUPLE_FIELDS = {"world_extent", "rock_radius_range", "rock_albedo_range", "particle_brightness_range", "particle_drift"}


def _coerce(key: str, value, default):
    """Check a literal against the type of the field's default value."""
    if key == "camera_waypoints":
        if value is None:
            return None
        if not isinstance(value, (tuple, list)) or not value:
            raise ValueError("expected (t, x, y, z, yaw, pitch) tuples")
        if not isinstance(value[0], (tuple, list)):
            value = (value,)  # single waypoint
        return tuple(tuple(_number(v) for v in wp) for wp in value)
    if key in _TUPLE_FIELDS:
        if not isinstance(value, (tuple, list)):
            raise ValueError("expected a tuple")
        return tuple(_number(v) for v in value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError("expected True or False")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError("expected an integer")
        return value
    if isinstance(default, float):
        return _number(value)
    if default is None:  # Optional[int]
        if value is None or (isinstance(value, int) and not isinstance(value, bool)):
            return value
        raise ValueError("expected an integer or None")
    raise ValueError(f"unsupported value {value!r}")


def _number(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse config text over ``base`` (defaults when omitted)."""
    base = base or RunConfig()
    values = {section: {} for section, _ in _SECTIONS}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(key or "?", "expected 'key = value'", lineno)
        if key not in _OWNER:
            raise ConfigError(key, "unknown key", lineno)
        if key in lines:
            raise ConfigError(key, f"repeated (first set on line {lines[key]})", lineno)
        section, cls, f = _OWNER[key]
        try:
            literal = ast.literal_eval(rest.strip())
            default = getattr(cls(), key) if key != "camera_waypoints" else None
            values[section][key] = _coerce(key, literal, default)
        except (ValueError, SyntaxError, TypeError) as exc:
            raise ConfigError(key, f"bad value {rest.strip()!r} ({exc})", lineno) from None
        lines[key] = lineno

    try:
        scene = scene_with(base.scene, **values["scene"])
        dvs = replace(base.dvs, **values["dvs"])
        options = replace(base.options, **values["options"])
    except ConfigError as exc:
        raise ConfigError(exc.field, str(exc).split(": ", 1)[-1], lines.get(exc.field)) from None
    return RunConfig(scene, dvs, options)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(_format_value(wp) for wp in v)
        return "(" + ", ".join(repr(x) for x in v) + ")"
    return repr(v)


def format_config(cfg: RunConfig) -> str:
    """Canonical text listing every field; parse_config inverts it exactly."""
    out = []
    for section, cls in _SECTIONS:
        out.append(f"# {section}")
        obj = getattr(cfg, section)
        for f in fields(cls):
            out.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
    return "\n".join(out) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(format_config(cfg).encode("utf-8")).hexdigest()


def as_dict(cfg: RunConfig) -> dict:
    return {section: asdict(getattr(cfg, section)) for section, _ in _SECTIONS}
