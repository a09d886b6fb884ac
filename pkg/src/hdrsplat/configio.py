"""Line-oriented `key = value` configuration with a closed key schema.

Unknown keys are rejected (typo safety), duplicates are errors, and every
key has a documented default so an empty file is a valid config. Booleans
are ``true``/``false``; optional values accept ``none``; lists are
comma-separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .losses import LossWeights
from .pipeline import RenderOptions


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    gaussians: int = 300
    extent: float = 1.0
    irr_min: float = 0.01
    irr_max: float = 50.0
    views: int = 16
    camera_radius: float = 4.0
    camera_height: float = 0.35
    image_size: int = 64
    focal_factor: float = 1.1
    t1: float = 0.125
    exposure_ratio: float = 4.0
    exposures: list[float] | None = None  # explicit ladder, overrides t1/ratio
    noise_std: float = 0.0
    crf: str = "gamma"
    crf_gamma: float = 2.2
    crf_gain: float = 0.73
    crf_center: float = 0.0
    crf_slope: float = 1.0
    svgamma_min: float = 1.8
    svgamma_max: float = 2.8
    base_scale: float = 0.08
    max_aspect: float = 5.0
    opacity_min: float = 0.5
    opacity_max: float = 0.99
    point_jitter: float = 0.02
    scene_seed: int = 0


@dataclass
class TrainSettings:
    total_iters: int = 3000
    residual_enable_iter: int = -1  # -1: 20% of total_iters
    exposure_mode: str = "exp3"
    seed: int = 0
    eval_every: int = 250
    checkpoint_every: int = 0  # 0: final checkpoint only
    use_unit_exposure_loss: bool = True
    unc_in_stage1: bool = True
    unc_grads_to_features: bool = False
    scalar_modulation: bool = False
    disable_unc_loss: bool = False
    feature_dim: int = 4
    init_feature_std: float = 0.1
    init_scale: float = 0.1
    init_opacity: float = 0.7
    grad_clip: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)

    def stage_boundary(self) -> int:
        if self.residual_enable_iter >= 0:
            return self.residual_enable_iter
        return self.total_iters // 5


@dataclass
class LrConfig:
    position: float = 1.6e-4
    position_final: float = 1.6e-6
    rotation: float = 1e-3
    scale: float = 5e-3
    opacity: float = 5e-2
    irradiance: float = 2.5e-3
    features: float = 2.5e-3
    tonemap: float = 5e-4
    tonemap_final: float = 5e-5


@dataclass
class EngineConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    lr: LrConfig = field(default_factory=LrConfig)
    render: RenderOptions = field(default_factory=RenderOptions)
    source_text: str = ""


def _parse_bool(s: str):
    if s == "true":
        return True
    if s == "false":
        return False
    raise ValueError("expected true or false")


def _parse_float(s: str):
    return float(s)


def _parse_opt_float(s: str):
    return None if s == "none" else float(s)


def _parse_int(s: str):
    return int(s)


def _parse_float_list(s: str):
    return [float(p.strip()) for p in s.split(",") if p.strip()]


def _choice(*options: str):
    def parse(s: str):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s

    return parse


def _parse_tile(s: str):
    v = int(s)
    return None if v == 0 else v


# key -> (section attr, field attr, parser)
SCHEMA: dict[str, tuple[str, str, object]] = {
    # scene generation
    "gaussians": ("scene", "gaussians", _parse_int),
    "extent": ("scene", "extent", _parse_float),
    "irr_min": ("scene", "irr_min", _parse_float),
    "irr_max": ("scene", "irr_max", _parse_float),
    "views": ("scene", "views", _parse_int),
    "camera_radius": ("scene", "camera_radius", _parse_float),
    "camera_height": ("scene", "camera_height", _parse_float),
    "image_size": ("scene", "image_size", _parse_int),
    "focal_factor": ("scene", "focal_factor", _parse_float),
    "t1": ("scene", "t1", _parse_float),
    "exposure_ratio": ("scene", "exposure_ratio", _parse_float),
    "exposures": ("scene", "exposures", _parse_float_list),
    "noise_std": ("scene", "noise_std", _parse_float),
    "crf": ("scene", "crf", _choice("linear", "gamma", "sigmoid_log", "svgamma")),
    "crf_gamma": ("scene", "crf_gamma", _parse_float),
    "crf_gain": ("scene", "crf_gain", _parse_float),
    "crf_center": ("scene", "crf_center", _parse_float),
    "crf_slope": ("scene", "crf_slope", _parse_float),
    "svgamma_min": ("scene", "svgamma_min", _parse_float),
    "svgamma_max": ("scene", "svgamma_max", _parse_float),
    "base_scale": ("scene", "base_scale", _parse_float),
    "max_aspect": ("scene", "max_aspect", _parse_float),
    "opacity_min": ("scene", "opacity_min", _parse_float),
    "opacity_max": ("scene", "opacity_max", _parse_float),
    "point_jitter": ("scene", "point_jitter", _parse_float),
    "scene_seed": ("scene", "scene_seed", _parse_int),
    # training
    "total_iters": ("train", "total_iters", _parse_int),
    "residual_enable_iter": ("train", "residual_enable_iter", _parse_int),
    "exposure_mode": ("train", "exposure_mode", _choice("exp1", "exp3")),
    "seed": ("train", "seed", _parse_int),
    "eval_every": ("train", "eval_every", _parse_int),
    "checkpoint_every": ("train", "checkpoint_every", _parse_int),
    "use_unit_exposure_loss": ("train", "use_unit_exposure_loss", _parse_bool),
    "unc_in_stage1": ("train", "unc_in_stage1", _parse_bool),
    "unc_grads_to_features": ("train", "unc_grads_to_features", _parse_bool),
    "scalar_modulation": ("train", "scalar_modulation", _parse_bool),
    "disable_unc_loss": ("train", "disable_unc_loss", _parse_bool),
    "feature_dim": ("train", "feature_dim", _parse_int),
    "init_feature_std": ("train", "init_feature_std", _parse_float),
    "init_scale": ("train", "init_scale", _parse_float),
    "init_opacity": ("train", "init_opacity", _parse_float),
    "grad_clip": ("train", "grad_clip", _parse_float),
    "lambda_d": ("weights", "lambda_d", _parse_float),
    "lambda_u": ("weights", "lambda_u", _parse_float),
    "lambda_e": ("weights", "lambda_e", _parse_float),
    "beta": ("weights", "beta", _parse_opt_float),
    # learning rates
    "lr_position": ("lr", "position", _parse_float),
    "lr_position_final": ("lr", "position_final", _parse_float),
    "lr_rotation": ("lr", "rotation", _parse_float),
    "lr_scale": ("lr", "scale", _parse_float),
    "lr_opacity": ("lr", "opacity", _parse_float),
    "lr_irradiance": ("lr", "irradiance", _parse_float),
    "lr_features": ("lr", "features", _parse_float),
    "lr_tonemap": ("lr", "tonemap", _parse_float),
    "lr_tonemap_final": ("lr", "tonemap_final", _parse_float),
    # renderer constants
    "lowpass": ("render", "lowpass", _parse_float),
    "near_plane": ("render", "near", _parse_float),
    "tile_size": ("render", "tile_size", _parse_tile),
    "log_eps": ("render", "log_eps", _parse_float),
}


def parse_config_text(text: str) -> EngineConfig:
    cfg = EngineConfig(source_text=text)
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        section, attr, parser = SCHEMA[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            detail = str(exc) or "bad value"
            raise ConfigError(
                f"line {lineno}: invalid value {value!r} for {key!r}: {detail}"
            ) from None
        target = cfg.train.weights if section == "weights" else getattr(cfg, section)
        setattr(target, attr, parsed)
    _validate(cfg)
    return cfg


def _validate(cfg: EngineConfig):
    sc = cfg.scene
    if sc.exposures is not None:
        if len(sc.exposures) != 5 or any(t <= 0 for t in sc.exposures):
            raise ConfigError("exposures must list 5 positive times")
        if any(b <= a for a, b in zip(sc.exposures, sc.exposures[1:])):
            raise ConfigError("exposures must be strictly increasing")
    tr = cfg.train
    if tr.residual_enable_iter > tr.total_iters:
        raise ConfigError("residual_enable_iter exceeds total_iters")
    if tr.feature_dim < 1:
        raise ConfigError("feature_dim must be >= 1")
    # LossWeights/RenderOptions validate their own ranges on construction
    LossWeights(
        lambda_d=tr.weights.lambda_d,
        lambda_u=tr.weights.lambda_u,
        lambda_e=tr.weights.lambda_e,
        beta=tr.weights.beta,
    )


def read_config(path: str) -> EngineConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())
