"""Synthetic ground truth: HDR Gaussian scenes, known CRFs, exposure ladders.

The generator builds a random HDR scene, renders per-view HDR ground truth
with the engine's own forward rasterizer (cross-checked against an
independent brute-force blend before anything is written), applies a known
CRF at five exposures, and emits the on-disk dataset layout. Because data
and model share the forward process, the recovery experiments measure
optimization and tone-mapping fidelity, not render-model mismatch.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .configio import SceneConfig
from .core_math import Camera, look_at_camera, project_cloud
from .dataset import (
    CrfDescriptor,
    Dataset,
    crf_field_name,
    ldr_name,
    hdr_name,
    write_cameras,
    write_crf_descriptor,
    write_exposures,
    write_points,
    write_split,
)
from .field import GaussianCloud, sigmoid
from .imgio import write_pfm, write_ppm
from .pipeline import RenderOptions
from .rasterizer import (
    ELLIPSE_CUTOFF,
    SIGMA_CLAMP,
    SIGMA_SKIP,
    TRANSMITTANCE_CUTOFF,
    rasterize_forward,
    sort_splats,
)

BLEND_CHECK_TOL = 1e-10


# -- ground-truth camera response functions ----------------------------------


@dataclass
class LinearCrf:
    gain: float = 1.0

    def apply(self, x):
        return np.clip(self.gain * np.maximum(x, 0.0), 0.0, 1.0)


@dataclass
class GammaCrf:
    gamma: float = 2.2
    gain: float = 1.0

    def apply(self, x):
        x = np.maximum(x, 0.0)
        return np.clip(self.gain * np.power(x, 1.0 / self.gamma), 0.0, 1.0)


@dataclass
class SigmoidLogCrf:
    center: float = 0.0
    slope: float = 1.0

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        flat = np.atleast_1d(x)
        out = np.zeros_like(flat)
        pos = flat > 0.0
        out[pos] = sigmoid(self.slope * (np.log(flat[pos]) - self.center))
        return np.clip(out.reshape(x.shape), 0.0, 1.0)


@dataclass
class SpatiallyVaryingGammaCrf:
    """Per-view, per-pixel gamma exponent with a shared gain."""

    gamma_fields: dict[int, np.ndarray] = field(default_factory=dict)  # view -> (h, w)
    gain: float = 1.0

    def apply_view(self, x, view: int):
        gam = self.gamma_fields[view]
        if gam.shape != np.asarray(x).shape[:2]:
            raise ValueError("gamma field does not match image size")
        x = np.maximum(x, 0.0)
        expo = 1.0 / gam
        if np.asarray(x).ndim == 3:
            expo = expo[:, :, None]
        return np.clip(self.gain * np.power(x, expo), 0.0, 1.0)


GroundTruthCrf = LinearCrf | GammaCrf | SigmoidLogCrf | SpatiallyVaryingGammaCrf


def crf_apply(crf, hdr_value: float, t: float, pixel=None, view: int = 0) -> float:
    """Scalar CRF evaluation c = crf(e * t); pixel selects the local gamma."""
    if hdr_value < 0:
        raise ValueError("hdr_value must be >= 0")
    if t <= 0:
        raise ValueError("exposure time must be > 0")
    x = hdr_value * t
    if isinstance(crf, SpatiallyVaryingGammaCrf):
        if pixel is None:
            raise ValueError("spatially varying CRF needs a pixel coordinate")
        px, py = pixel
        gam = float(crf.gamma_fields[view][int(py), int(px)])
        if x <= 0:
            return 0.0
        return float(np.clip(crf.gain * x ** (1.0 / gam), 0.0, 1.0))
    return float(np.asarray(crf.apply(np.asarray(x)), dtype=np.float64))


def crf_apply_image(crf, e_hdr: np.ndarray, t: float, view: int = 0) -> np.ndarray:
    if isinstance(crf, SpatiallyVaryingGammaCrf):
        return crf.apply_view(e_hdr * t, view)
    return crf.apply(e_hdr * t)


def crf_from_config(sc: SceneConfig):
    if sc.crf == "linear":
        return LinearCrf(gain=sc.crf_gain)
    if sc.crf == "gamma":
        return GammaCrf(gamma=sc.crf_gamma, gain=sc.crf_gain)
    if sc.crf == "sigmoid_log":
        return SigmoidLogCrf(center=sc.crf_center, slope=sc.crf_slope)
    if sc.crf == "svgamma":
        return SpatiallyVaryingGammaCrf(gain=sc.crf_gain)
    raise ValueError(f"unknown CRF kind {sc.crf!r}")


def crf_descriptor(crf) -> CrfDescriptor:
    if isinstance(crf, LinearCrf):
        return CrfDescriptor("linear", {"gain": crf.gain})
    if isinstance(crf, GammaCrf):
        return CrfDescriptor("gamma", {"gamma": crf.gamma, "gain": crf.gain})
    if isinstance(crf, SigmoidLogCrf):
        return CrfDescriptor("sigmoid_log", {"center": crf.center, "slope": crf.slope})
    if isinstance(crf, SpatiallyVaryingGammaCrf):
        return CrfDescriptor("svgamma", {"gain": crf.gain})
    raise TypeError(f"not a CRF: {crf!r}")


# -- scene generation ---------------------------------------------------------


def exposure_ladder(sc: SceneConfig) -> np.ndarray:
    if sc.exposures is not None:
        return np.asarray(sc.exposures, dtype=np.float64)
    return sc.t1 * sc.exposure_ratio ** np.arange(5, dtype=np.float64)


def generate_scene(sc: SceneConfig, seed: int | None = None):
    """Deterministic random HDR scene: (ground-truth cloud, cameras dict)."""
    if sc.gaussians < 1:
        raise ValueError("scene needs at least one Gaussian")
    if sc.irr_min <= 0 or sc.irr_max < sc.irr_min:
        raise ValueError("bad irradiance range")
    rng = np.random.default_rng(sc.scene_seed if seed is None else seed)
    n = sc.gaussians

    position = rng.uniform(-sc.extent, sc.extent, size=(n, 3))
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)

    base = sc.base_scale * sc.extent
    half = 0.5 * np.log(sc.max_aspect)
    scale = base * np.exp(rng.uniform(-half, half, size=(n, 3)))

    lum = np.exp(rng.uniform(np.log(sc.irr_min), np.log(sc.irr_max), size=n))
    chroma = rng.uniform(0.6, 1.0, size=(n, 3))
    irradiance = np.clip(lum[:, None] * chroma, sc.irr_min, sc.irr_max)

    lo = np.clip(sc.opacity_min, 1e-4, 1 - 1e-4)
    hi = np.clip(sc.opacity_max, lo, 1 - 1e-4)
    opacity = rng.uniform(lo, hi, size=n)

    cloud = GaussianCloud(
        position=position,
        rot_raw=rot,
        scale_raw=np.log(scale),
        opacity_raw=np.log(opacity / (1.0 - opacity)),
        log_irradiance=np.log(irradiance),
        feature=np.zeros((n, 1)),
    )

    fx = sc.focal_factor * sc.image_size
    cameras = {}
    for v in range(sc.views):
        ang = 2.0 * np.pi * v / sc.views
        pos = np.array(
            [
                sc.camera_radius * np.cos(ang),
                sc.camera_radius * np.sin(ang),
                sc.camera_height * sc.camera_radius,
            ]
        )
        cameras[v] = look_at_camera(
            pos, (0.0, 0.0, 0.0), fx, fx, sc.image_size, sc.image_size
        )
    return cloud, cameras


# -- independent blend oracle --------------------------------------------------


def reference_blend(
    mean2d, cov2d, opacity, payload, background, width: int, height: int
) -> np.ndarray:
    """Brute-force full-image blend in extended precision, no bounding boxes.

    Implements the documented per-pixel inclusion rule directly; used to
    cross-check rasterize_forward before synthetic ground truth is trusted.
    """
    m = len(opacity)
    c = payload.shape[1]
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    out = np.zeros((height, width, c), dtype=np.longdouble)
    T = np.ones((height, width), dtype=np.longdouble)
    for i in range(m):
        a, b, cc = cov2d[i, 0, 0], cov2d[i, 0, 1], cov2d[i, 1, 1]
        det = a * cc - b * b
        if det <= 0 or a <= 0 or cc <= 0:
            continue
        ia, ib, ic = cc / det, -b / det, a / det
        dx = xs - mean2d[i, 0]
        dy = ys - mean2d[i, 1]
        q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
        sigma = np.minimum(opacity[i] * np.exp(-0.5 * q), SIGMA_CLAMP)
        keep = (q <= ELLIPSE_CUTOFF) & (sigma >= SIGMA_SKIP) & (T >= TRANSMITTANCE_CUTOFF)
        sigma = np.where(keep, sigma, 0.0).astype(np.longdouble)
        out += (sigma * T)[:, :, None] * payload[i][None, None, :]
        T *= 1.0 - sigma
    out += T[:, :, None] * background.astype(np.longdouble)[None, None, :]
    return out.astype(np.float64)


def render_scene_hdr(
    cloud: GaussianCloud,
    cam: Camera,
    payload: np.ndarray,
    background: np.ndarray,
    options: RenderOptions,
    verify: bool = True,
):
    """Forward-blend an arbitrary payload from a ground-truth cloud."""
    from .core_math import covariances_from_rs

    cov3 = covariances_from_rs(cloud.rot_raw, np.exp(cloud.scale_raw))
    mean2d, cov2d, depth, visible = project_cloud(
        cloud.position, cov3, cam, options.lowpass, options.near
    )
    vis = np.nonzero(visible)[0]
    order = vis[sort_splats(depth[vis])]
    alpha = sigmoid(cloud.opacity_raw)
    img, _, _ = rasterize_forward(
        mean2d[order],
        cov2d[order],
        alpha[order],
        payload[order],
        background,
        cam.width,
        cam.height,
        gaussian_index=order,
    )
    if verify:
        ref = reference_blend(
            mean2d[order],
            cov2d[order],
            alpha[order],
            payload[order],
            background,
            cam.width,
            cam.height,
        )
        err = float(np.max(np.abs(img - ref))) if img.size else 0.0
        if err > BLEND_CHECK_TOL:
            raise RuntimeError(
                f"rasterizer disagrees with the brute-force blend by {err:.3e}"
            )
    return img


def emit_dataset(
    cloud: GaussianCloud,
    cameras: dict[int, Camera],
    crf,
    sc: SceneConfig,
    out_dir: str,
    options: RenderOptions | None = None,
) -> Dataset:
    """Render HDR ground truth, apply the CRF ladder, write the dataset."""
    options = options or RenderOptions()
    exposures = exposure_ladder(sc)
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "ldr"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "hdr"), exist_ok=True)

    views = sorted(cameras)
    train_views = views[0::2]
    test_views = views[1::2]

    # world-attached gamma assignment so local tone behavior is view-consistent
    svgamma = isinstance(crf, SpatiallyVaryingGammaCrf)
    if svgamma:
        frac = (cloud.position[:, 0] + sc.extent) / (2.0 * sc.extent)
        gauss_gamma = sc.svgamma_min + (sc.svgamma_max - sc.svgamma_min) * np.clip(
            frac, 0.0, 1.0
        )
        gamma_mid = 0.5 * (sc.svgamma_min + sc.svgamma_max)
        os.makedirs(os.path.join(out_dir, "crf_fields"), exist_ok=True)

    hdr_images: dict[int, np.ndarray] = {}
    ldr_images: dict[tuple[int, int], np.ndarray] = {}
    for v in views:
        cam = cameras[v]
        payload = np.exp(cloud.log_irradiance)
        e_img = render_scene_hdr(cloud, cam, payload, np.zeros(3), options)
        hdr_images[v] = e_img
        write_pfm(os.path.join(out_dir, hdr_name(v)), e_img)
        if svgamma:
            gmap = render_scene_hdr(
                cloud,
                cam,
                gauss_gamma[:, None],
                np.array([gamma_mid]),
                options,
                verify=False,
            )[:, :, 0]
            crf.gamma_fields[v] = np.clip(gmap, sc.svgamma_min, sc.svgamma_max)
            write_pfm(
                os.path.join(out_dir, crf_field_name(v)),
                np.repeat(crf.gamma_fields[v][:, :, None], 3, axis=2),
            )
        for k, t in enumerate(exposures, start=1):
            ldr = crf_apply_image(crf, e_img, float(t), view=v)
            if sc.noise_std > 0:
                noise_rng = np.random.default_rng((sc.scene_seed, v, k))
                ldr = np.clip(ldr + noise_rng.normal(0.0, sc.noise_std, ldr.shape), 0.0, 1.0)
            ldr_images[(v, k)] = ldr
            write_ppm(os.path.join(out_dir, ldr_name(v, k)), ldr)

    write_cameras(os.path.join(out_dir, "cameras.txt"), cameras)
    write_exposures(os.path.join(out_dir, "exposures.txt"), exposures)
    write_split(os.path.join(out_dir, "split.txt"), train_views, test_views)
    write_crf_descriptor(os.path.join(out_dir, "crf.txt"), crf_descriptor(crf))

    # SfM stand-in: jittered ground-truth positions with mid-exposure colors
    rng = np.random.default_rng((sc.scene_seed, "points"))
    points = cloud.position + rng.normal(
        0.0, sc.point_jitter * sc.extent, size=cloud.position.shape
    )
    e_gauss = np.exp(cloud.log_irradiance)
    t3 = float(exposures[2])
    if svgamma:
        hints = np.clip(
            crf.gain * np.power(np.maximum(e_gauss * t3, 0.0), 1.0 / gauss_gamma[:, None]),
            0.0,
            1.0,
        )
    else:
        hints = crf.apply(e_gauss * t3)
    write_points(os.path.join(out_dir, "points.txt"), points, hints)

    return Dataset(
        root=out_dir,
        cameras=cameras,
        exposures=exposures,
        train_views=train_views,
        test_views=test_views,
        ldr=ldr_images,
        hdr=hdr_images,
        crf=crf_descriptor(crf),
        points=points,
        point_colors=hints,
    )
