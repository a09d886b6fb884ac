"""The learnable HDR scene: raw Gaussian parameters and their activations.

Raw storage keeps optimization unconstrained; activations map to the
constrained attributes the renderer consumes:

    opacity  = sigmoid(opacity_raw)        in (0, 1)
    scale    = exp(scale_raw)              > 0
    e        = exp(log_irradiance)         > 0 (per RGB channel)
    rotation = normalize(rot_raw)

``log_irradiance`` doubles as the tone-mapper input ln(e): the log-domain
mapper reads the raw value directly, no exp/log round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import quaternion_normalize


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    ex = np.exp(np.where(pos, -x, x))  # exponent always <= 0: no overflow
    return np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("logit argument must lie in (0, 1)")
    return float(np.log(p / (1.0 - p)))


@dataclass
class CloudConfig:
    feature_dim: int = 4
    init_feature_std: float = 0.1
    init_scale: float = 0.1
    init_opacity: float = 0.7

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


@dataclass
class GaussianCloud:
    """Struct-of-arrays scene representation with matching gradient buffers."""

    position: np.ndarray  # (N, 3) world units
    rot_raw: np.ndarray  # (N, 4) unnormalized quaternion (w, x, y, z)
    scale_raw: np.ndarray  # (N, 3) log-scale
    opacity_raw: np.ndarray  # (N,) pre-sigmoid
    log_irradiance: np.ndarray  # (N, 3) ln(e) per channel
    feature: np.ndarray  # (N, d) context features
    grad: "CloudGrads" = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.grad is None:
            self.grad = CloudGrads.zeros_like(self)

    @property
    def count(self) -> int:
        return self.position.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.feature.shape[1]

    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_raw)

    def scale(self) -> np.ndarray:
        return np.exp(self.scale_raw)

    def irradiance(self) -> np.ndarray:
        return np.exp(self.log_irradiance)

    def param_items(self):
        """(name, raw array, grad array) triples, one per optimizer group."""
        g = self.grad
        return [
            ("position", self.position, g.position),
            ("rotation", self.rot_raw, g.rot_raw),
            ("scale", self.scale_raw, g.scale_raw),
            ("opacity", self.opacity_raw, g.opacity_raw),
            ("irradiance", self.log_irradiance, g.log_irradiance),
            ("features", self.feature, g.feature),
        ]

    def zero_grad(self):
        for _, _, g in self.param_items():
            g.fill(0.0)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            position=self.position.copy(),
            rot_raw=self.rot_raw.copy(),
            scale_raw=self.scale_raw.copy(),
            opacity_raw=self.opacity_raw.copy(),
            log_irradiance=self.log_irradiance.copy(),
            feature=self.feature.copy(),
        )


@dataclass
class CloudGrads:
    position: np.ndarray
    rot_raw: np.ndarray
    scale_raw: np.ndarray
    opacity_raw: np.ndarray
    log_irradiance: np.ndarray
    feature: np.ndarray

    @staticmethod
    def zeros_like(cloud: GaussianCloud) -> "CloudGrads":
        return CloudGrads(
            position=np.zeros_like(cloud.position),
            rot_raw=np.zeros_like(cloud.rot_raw),
            scale_raw=np.zeros_like(cloud.scale_raw),
            opacity_raw=np.zeros_like(cloud.opacity_raw),
            log_irradiance=np.zeros_like(cloud.log_irradiance),
            feature=np.zeros_like(cloud.feature),
        )


def init_from_points(
    points, colors_hint=None, cfg: CloudConfig | None = None, seed: int = 0
) -> GaussianCloud:
    """Seed a cloud from a sparse point set (the SfM stand-in).

    log_irradiance starts at ln(max(hint, 0.01)) when a color hint is given,
    else ln(0.5); features draw zero-mean normal with std cfg.init_feature_std.
    """
    cfg = cfg or CloudConfig()
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.size == 0:
        raise ValueError("init_from_points requires at least one point")
    n = points.shape[0]
    if colors_hint is not None:
        hint = np.atleast_2d(np.asarray(colors_hint, dtype=np.float64))
        if hint.shape != (n, 3):
            raise ValueError("colors_hint shape must match points")
        log_irr = np.log(np.maximum(hint, 0.01))
    else:
        log_irr = np.full((n, 3), np.log(0.5))
    rng = np.random.default_rng(seed)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    features = (
        rng.normal(0.0, cfg.init_feature_std, size=(n, cfg.feature_dim))
        if cfg.init_feature_std > 0
        else np.zeros((n, cfg.feature_dim))
    )
    return GaussianCloud(
        position=points.copy(),
        rot_raw=rot,
        scale_raw=np.full((n, 3), np.log(cfg.init_scale)),
        opacity_raw=np.full(n, logit(cfg.init_opacity)),
        log_irradiance=log_irr,
        feature=features,
    )


def activate(cloud: GaussianCloud, index: int):
    """Constrained attributes (alpha, e, scale, unit quaternion, f) of one Gaussian."""
    if not 0 <= index < cloud.count:
        raise ValueError(f"gaussian index {index} out of range [0, {cloud.count})")
    return (
        float(sigmoid(cloud.opacity_raw[index])),
        np.exp(cloud.log_irradiance[index]),
        np.exp(cloud.scale_raw[index]),
        quaternion_normalize(cloud.rot_raw[index]),
        cloud.feature[index].copy(),
    )
