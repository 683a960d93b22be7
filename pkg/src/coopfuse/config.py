"""Run configuration: an INI file with one section per subsystem.

Example:

    [run]
    template = parking_lot
    seeds = 0:50
    methods = single, maxout, coff
    output_dir = out
    workers = 1

    [grid]
    voxel = 0.4

    [lidar]
    beams = 16

Every key has a default; an empty file (or missing sections) is a valid
config. Unknown sections or keys are rejected so typos fail loudly instead of
silently running defaults.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .detector import EvalConfig
from .fusion import EnhanceConfig, WeightConfig
from .grid import DEFAULT_CHANNELS, GridSpec
from .scene import DEFAULT_N_SAT, TEMPLATES, LidarModel

METHODS = ("single", "maxout", "coff", "coff_no_enhance")

DEFAULT_FRAME_RATE = 20.0
DEFAULT_LINK_RATE_BPS = 27e6  # DSRC-class link
DEFAULT_ALT_CONFIDENCE = 0.3


class ConfigError(ValueError):
    """A config file or override that cannot be turned into a valid run."""


@dataclass(frozen=True)
class RunConfig:
    template: str = "parking_lot"
    seeds: tuple[int, ...] = tuple(range(10))
    methods: tuple[str, ...] = METHODS
    output_dir: str = "out"
    workers: int = 1
    grid: GridSpec = field(default_factory=GridSpec)
    channels: int = DEFAULT_CHANNELS
    n_sat: int = DEFAULT_N_SAT
    lidar: LidarModel = field(default_factory=LidarModel)
    weight: WeightConfig = field(default_factory=WeightConfig)
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    alt_confidence_threshold: float = DEFAULT_ALT_CONFIDENCE
    frame_rate: float = DEFAULT_FRAME_RATE
    link_rate_bps: float = DEFAULT_LINK_RATE_BPS

    def __post_init__(self) -> None:
        if self.template not in TEMPLATES:
            raise ConfigError(f"unknown template {self.template!r}; expected one of {TEMPLATES}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be unique")
        if not self.methods:
            raise ConfigError("need at least one method")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must be unique")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.n_sat < 1:
            raise ConfigError(f"n_sat must be >= 1, got {self.n_sat}")
        if not 0 <= self.alt_confidence_threshold <= 1:
            raise ConfigError(
                f"alt confidence threshold out of [0, 1]: {self.alt_confidence_threshold}"
            )
        if self.frame_rate <= 0 or self.link_rate_bps <= 0:
            raise ConfigError("frame rate and link rate must be positive")


def parse_seeds(text: str) -> tuple[int, ...]:
    """Seed syntax: a count ("50"), a range ("10:60"), or a list ("1, 5, 9")."""
    text = text.strip()
    try:
        if ":" in text:
            lo_s, hi_s = text.split(":", 1)
            lo, hi = int(lo_s), int(hi_s)
            if hi <= lo:
                raise ConfigError(f"empty seed range {text!r}")
            return tuple(range(lo, hi))
        if "," in text:
            return tuple(int(part) for part in text.split(","))
        count = int(text)
        if count < 1:
            raise ConfigError(f"seed count must be >= 1, got {count}")
        return tuple(range(count))
    except ValueError as exc:
        raise ConfigError(f"cannot parse seeds {text!r}: {exc}") from exc


def parse_methods(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


class _Section:
    """One config section with typed getters and leftover-key detection."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self._items = dict(parser.items(name)) if parser.has_section(name) else {}

    def take(self, key: str, default, cast):
        if key not in self._items:
            return default
        raw = self._items.pop(key)
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{self.name}] {key} = {raw!r}: {exc}") from exc

    def reject_leftovers(self) -> None:
        if self._items:
            keys = ", ".join(sorted(self._items))
            raise ConfigError(f"unknown keys in [{self.name}]: {keys}")


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_SECTIONS = ("run", "grid", "features", "lidar", "fusion", "enhance", "eval", "bandwidth")


def load_config(path: str) -> RunConfig:
    """Read an INI run config, filling defaults for anything unstated."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path!r}: {exc}") from exc

    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")

    run = _Section(parser, "run")
    grid = _Section(parser, "grid")
    features = _Section(parser, "features")
    lidar = _Section(parser, "lidar")
    fusion = _Section(parser, "fusion")
    enhance = _Section(parser, "enhance")
    eval_s = _Section(parser, "eval")
    bandwidth = _Section(parser, "bandwidth")

    defaults = RunConfig()
    d_grid, d_lidar = defaults.grid, defaults.lidar
    d_weight, d_enhance, d_eval = defaults.weight, defaults.enhance, defaults.eval

    voxel = grid.take("voxel", None, float)
    try:
        grid_spec = GridSpec(
            x_range=(
                grid.take("x_min", d_grid.x_range[0], float),
                grid.take("x_max", d_grid.x_range[1], float),
            ),
            y_range=(
                grid.take("y_min", d_grid.y_range[0], float),
                grid.take("y_max", d_grid.y_range[1], float),
            ),
            z_range=(
                grid.take("z_min", d_grid.z_range[0], float),
                grid.take("z_max", d_grid.z_range[1], float),
            ),
            voxel_x=grid.take("voxel_x", voxel if voxel is not None else d_grid.voxel_x, float),
            voxel_y=grid.take("voxel_y", voxel if voxel is not None else d_grid.voxel_y, float),
        )
        lidar_model = LidarModel(
            beams=lidar.take("beams", d_lidar.beams, int),
            azimuth_step=math.radians(
                lidar.take("azimuth_step_deg", math.degrees(d_lidar.azimuth_step), float)
            ),
            max_range=lidar.take("max_range", d_lidar.max_range, float),
            dropout_floor=lidar.take("dropout_floor", d_lidar.dropout_floor, float),
            dropout_enabled=lidar.take("dropout", d_lidar.dropout_enabled, _parse_bool),
            beam_coverage=lidar.take("beam_coverage", d_lidar.beam_coverage, float),
        )
        weight_cfg = WeightConfig(
            s_low=fusion.take("s_low", d_weight.s_low, float),
            s_high=fusion.take("s_high", d_weight.s_high, float),
            c_low=fusion.take("c_low", d_weight.c_low, float),
            c_mid=fusion.take("c_mid", d_weight.c_mid, float),
            x_cap=fusion.take("x_cap", d_weight.x_cap, float),
        )
        enhance_cfg = EnhanceConfig(
            y=enhance.take("y", d_enhance.y, float),
            y_max=enhance.take("y_max", d_enhance.y_max, float),
        )
        eval_cfg = EvalConfig(
            iou_threshold=eval_s.take("iou_threshold", d_eval.iou_threshold, float),
            confidence_threshold=eval_s.take(
                "confidence_threshold", d_eval.confidence_threshold, float
            ),
            near_far_split=eval_s.take("near_far_split", d_eval.near_far_split, float),
            activation_threshold=eval_s.take(
                "activation_threshold", d_eval.activation_threshold, float
            ),
            logistic_slope=eval_s.take("logistic_slope", d_eval.logistic_slope, float),
            logistic_midpoint=eval_s.take(
                "logistic_midpoint", d_eval.logistic_midpoint, float
            ),
        )
        cfg = RunConfig(
            template=run.take("template", defaults.template, str),
            seeds=run.take("seeds", defaults.seeds, parse_seeds),
            methods=run.take("methods", defaults.methods, parse_methods),
            output_dir=run.take("output_dir", defaults.output_dir, str),
            workers=run.take("workers", defaults.workers, int),
            grid=grid_spec,
            channels=features.take("channels", defaults.channels, int),
            n_sat=features.take("n_sat", defaults.n_sat, int),
            lidar=lidar_model,
            weight=weight_cfg,
            enhance=enhance_cfg,
            eval=eval_cfg,
            alt_confidence_threshold=eval_s.take(
                "alt_confidence_threshold", defaults.alt_confidence_threshold, float
            ),
            frame_rate=bandwidth.take("frame_rate", defaults.frame_rate, float),
            link_rate_bps=bandwidth.take("link_rate_mbps", defaults.link_rate_bps / 1e6, float)
            * 1e6,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    for section in (run, grid, features, lidar, fusion, enhance, eval_s, bandwidth):
        section.reject_leftovers()
    return cfg
