"""Dual-rendering graph: 3D tone mapping then blending, and blending then
2D tone mapping, with uncertainty maps for both paths.

One rasterization pass carries the concatenated payload

    [e_i (3) | c*_i (3) | f_i (d) | u_i (1)]

so the HDR image E, the 3D-path LDR I3d, the feature map F and the
uncertainty map U3d share sigma weights, ordering, and truncation decisions.
The 2D path then tone-maps ln(E t) per pixel, conditioned on F.

``render_view_backward`` is the exact adjoint of ``render_view``. Its
``rho_only`` mode routes uncertainty-loss gradients solely into the
uncertainty head, which is how the trainer realizes the stop-gradient split
between reconstruction and uncertainty objectives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import (
    Camera,
    DEFAULT_LOWPASS,
    DEFAULT_NEAR,
    covariances_from_rs,
    covariances_from_rs_backward,
    project_cloud,
    project_cloud_backward,
)
from .decisions import DecisionLog
from .field import GaussianCloud, sigmoid
from .rasterizer import rasterize_backward, rasterize_forward, sort_splats
from .tonemap import UNCERTAINTY_FLOOR, ToneMapperBank


@dataclass
class ExposureContext:
    t: float
    ln_t: float = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.t) and self.t > 0):
            raise ValueError("exposure time must be positive and finite")
        self.ln_t = float(np.log(self.t))


@dataclass
class RenderOptions:
    lowpass: float = DEFAULT_LOWPASS
    near: float = DEFAULT_NEAR
    tile_size: int | None = None
    log_eps: float = 1e-6  # guard for ln(E) at empty pixels
    background_u: float = UNCERTAINTY_FLOOR


@dataclass
class _RenderContext:
    """Forward state retained for the backward pass."""

    cam: Camera
    exposure: ExposureContext
    options: RenderOptions
    order: np.ndarray  # sorted visible indices into the cloud
    visible: np.ndarray
    mean2d_s: np.ndarray
    cov2d_s: np.ndarray
    alpha_s: np.ndarray
    payload_s: np.ndarray
    record: object
    cov3: np.ndarray
    scale_act: np.ndarray
    alpha_act: np.ndarray
    irradiance: np.ndarray
    tape3d_tone: object
    tape3d_unc: object
    tape2d_tone: object
    tape2d_unc: object
    bg_tape: object
    count: int
    feature_dim: int


@dataclass
class RenderOutput:
    e_hdr: np.ndarray  # (h, w, 3) linear irradiance
    features: np.ndarray  # (h, w, d)
    i3d: np.ndarray  # (h, w, 3) in [0, 1]
    i2d: np.ndarray  # (h, w, 3) in [0, 1]
    u3d: np.ndarray  # (h, w) >= 0.1 up to blend rounding
    u2d: np.ndarray  # (h, w) >= 0.1
    alpha: np.ndarray  # (h, w)
    ctx: _RenderContext = field(repr=False, default=None)  # type: ignore[assignment]


@dataclass
class RenderGrads:
    """Upstream gradients for any subset of the rendered maps."""

    e_hdr: np.ndarray | None = None
    i3d: np.ndarray | None = None
    i2d: np.ndarray | None = None
    u3d: np.ndarray | None = None
    u2d: np.ndarray | None = None


def render_view(
    cloud: GaussianCloud,
    bank: ToneMapperBank,
    cam: Camera,
    exposure,
    options: RenderOptions | None = None,
    decisions: DecisionLog | None = None,
) -> RenderOutput:
    if cloud.count == 0:
        raise ValueError("cannot render an empty cloud")
    if bank.feature_dim != cloud.feature_dim:
        raise ValueError("cloud/bank feature dimensions disagree")
    if not isinstance(exposure, ExposureContext):
        exposure = ExposureContext(float(exposure))
    options = options or RenderOptions()
    d = cloud.feature_dim
    n = cloud.count

    # per-Gaussian attributes and 3D local tone mapping
    ln_et = cloud.log_irradiance + exposure.ln_t
    c_star, tape3d_tone = bank.tone_map_local_batch(ln_et, cloud.feature, decisions)
    u_gauss, tape3d_unc = bank.predict_uncertainty_batch(ln_et, cloud.feature, decisions)
    irr = np.exp(cloud.log_irradiance)
    alpha_act = sigmoid(cloud.opacity_raw)
    scale_act = np.exp(cloud.scale_raw)
    cov3 = covariances_from_rs(cloud.rot_raw, scale_act)

    mean2d, cov2d, depth, visible = project_cloud(
        cloud.position, cov3, cam, options.lowpass, options.near
    )
    vis_idx = np.nonzero(visible)[0]
    order = vis_idx[sort_splats(depth[vis_idx])]
    if decisions is not None:
        decisions.add_bits(visible)

    payload = np.concatenate([irr, c_star, cloud.feature, u_gauss[:, None]], axis=1)

    # background: zero irradiance tone-mapped for the LDR channels, zero
    # features, the uncertainty floor for the U channel
    bg_ln = np.full((1, 3), np.log(options.log_eps) + exposure.ln_t)
    bg_ldr, bg_tape = bank.tone_map_local_batch(bg_ln, np.zeros((1, d)), decisions)
    background = np.zeros(7 + d)
    background[3:6] = bg_ldr[0]
    background[6 + d] = options.background_u

    img, alpha, record = rasterize_forward(
        mean2d[order],
        cov2d[order],
        alpha_act[order],
        payload[order],
        background,
        cam.width,
        cam.height,
        gaussian_index=order,
        tile_size=options.tile_size,
        decisions=decisions,
    )
    e_hdr = img[:, :, 0:3]
    i3d = img[:, :, 3:6]
    fmap = img[:, :, 6 : 6 + d]
    u3d = img[:, :, 6 + d]

    # 2D path: per-pixel tone mapping of the rendered HDR, conditioned on F
    e_guard = np.maximum(e_hdr, options.log_eps)
    if decisions is not None:
        decisions.add_bits(e_hdr > options.log_eps)
    ln_et2 = (np.log(e_guard) + exposure.ln_t).reshape(-1, 3)
    f_flat = fmap.reshape(-1, d)
    i2d_flat, tape2d_tone = bank.tone_map_local_batch(ln_et2, f_flat, decisions)
    u2d_flat, tape2d_unc = bank.predict_uncertainty_batch(ln_et2, f_flat, decisions)

    ctx = _RenderContext(
        cam=cam,
        exposure=exposure,
        options=options,
        order=order,
        visible=visible,
        mean2d_s=mean2d[order],
        cov2d_s=cov2d[order],
        alpha_s=alpha_act[order],
        payload_s=payload[order],
        record=record,
        cov3=cov3,
        scale_act=scale_act,
        alpha_act=alpha_act,
        irradiance=irr,
        tape3d_tone=tape3d_tone,
        tape3d_unc=tape3d_unc,
        tape2d_tone=tape2d_tone,
        tape2d_unc=tape2d_unc,
        bg_tape=bg_tape,
        count=n,
        feature_dim=d,
    )
    return RenderOutput(
        e_hdr=e_hdr,
        features=fmap,
        i3d=i3d,
        i2d=i2d_flat.reshape(cam.height, cam.width, 3),
        u3d=u3d,
        u2d=u2d_flat.reshape(cam.height, cam.width),
        alpha=alpha,
        ctx=ctx,
    )


def render_view_backward(
    cloud: GaussianCloud,
    bank: ToneMapperBank,
    out: RenderOutput,
    grads: RenderGrads,
    mode: str = "generic",
    unc_features: bool = False,
):
    """Accumulate gradients of the rendered maps into cloud and bank buffers.

    mode "generic": exact reverse-mode of render_view for every supplied map.
    mode "rho_only": uncertainty-map gradients reach only the uncertainty MLP
    (plus, with ``unc_features``, the context features through the payload);
    reconstruction-map gradients are not accepted in this mode.
    """
    ctx = out.ctx
    if ctx is None or ctx.count != cloud.count or ctx.feature_dim != cloud.feature_dim:
        raise ValueError("render output does not match this cloud")
    if mode not in ("generic", "rho_only"):
        raise ValueError(f"unknown backward mode {mode!r}")
    if mode == "rho_only" and any(
        g is not None for g in (grads.e_hdr, grads.i3d, grads.i2d)
    ):
        raise ValueError("rho_only mode accepts uncertainty gradients only")

    h, w = ctx.cam.height, ctx.cam.width
    d = ctx.feature_dim
    nch = 7 + d
    uch = 6 + d
    eps = ctx.options.log_eps

    grad_img = np.zeros((h, w, nch))
    de_img = np.zeros((h, w, 3))
    df_img = np.zeros((h, w, d))

    if grads.i3d is not None:
        grad_img[:, :, 3:6] += grads.i3d
    if grads.e_hdr is not None:
        de_img += grads.e_hdr

    # adjoint of the per-pixel 2D path
    def chain_ln_e(dln_flat):
        guard = out.e_hdr > eps
        de_img[guard] += (dln_flat.reshape(h, w, 3) / np.maximum(out.e_hdr, eps))[guard]

    if grads.i2d is not None:
        dln2, df2 = bank.tone_map_local_backward_batch(
            ctx.tape2d_tone, grads.i2d.reshape(-1, 3)
        )
        chain_ln_e(dln2)
        df_img += df2.reshape(h, w, d)

    if grads.u2d is not None:
        if mode == "generic":
            dln2u, df2u = bank.predict_uncertainty_backward_batch(
                ctx.tape2d_unc, grads.u2d.ravel()
            )
            chain_ln_e(dln2u)
            df_img += df2u.reshape(h, w, d)
        else:
            got = bank.predict_uncertainty_backward_batch(
                ctx.tape2d_unc, grads.u2d.ravel(), want_input_grad=unc_features
            )
            if unc_features:
                df_img += got[1].reshape(h, w, d)

    grad_img[:, :, 0:3] += de_img
    grad_img[:, :, 6 : 6 + d] += df_img
    if grads.u3d is not None:
        grad_img[:, :, uch] += grads.u3d

    sigma_channels = np.ones(nch, dtype=bool)
    if mode == "rho_only":
        sigma_channels[:] = False

    gp, galpha, gmean2d, gcov2d, gbg = rasterize_backward(
        grad_img,
        ctx.record,
        ctx.mean2d_s,
        ctx.cov2d_s,
        ctx.alpha_s,
        ctx.payload_s,
        sigma_channels=sigma_channels,
    )

    n = cloud.count
    order = ctx.order

    # payload channels back to per-Gaussian attributes
    de_full = np.zeros((n, 3))
    de_full[order] = gp[:, 0:3]
    cloud.grad.log_irradiance += de_full * ctx.irradiance

    if mode == "generic":
        dc_full = np.zeros((n, 3))
        dc_full[order] = gp[:, 3:6]
        dln3, df3 = bank.tone_map_local_backward_batch(ctx.tape3d_tone, dc_full)
        cloud.grad.log_irradiance += dln3
        cloud.grad.feature += df3

    df_full = np.zeros((n, d))
    df_full[order] = gp[:, 6 : 6 + d]
    cloud.grad.feature += df_full

    du_full = np.zeros(n)
    du_full[order] = gp[:, uch]
    if grads.u3d is not None:
        if mode == "generic":
            dln3u, df3u = bank.predict_uncertainty_backward_batch(ctx.tape3d_unc, du_full)
            cloud.grad.log_irradiance += dln3u
            cloud.grad.feature += df3u
        else:
            got = bank.predict_uncertainty_backward_batch(
                ctx.tape3d_unc, du_full, want_input_grad=unc_features
            )
            if unc_features:
                cloud.grad.feature += got[1]

    if mode == "generic":
        # LDR background is bank-dependent; its gradient closes the loop
        bank.tone_map_local_backward_batch(ctx.bg_tape, gbg[3:6][None, :])

        galpha_full = np.zeros(n)
        galpha_full[order] = galpha
        a = ctx.alpha_act
        cloud.grad.opacity_raw += galpha_full * a * (1.0 - a)

        gm_full = np.zeros((n, 2))
        gm_full[order] = gmean2d
        gc_full = np.zeros((n, 3, 3))
        gc_full[order] = gcov2d
        gmu, gcov3 = project_cloud_backward(
            cloud.position, ctx.cov3, ctx.cam, ctx.visible, gm_full, gc_full
        )
        cloud.grad.position += gmu
        gq, gs = covariances_from_rs_backward(cloud.rot_raw, ctx.scale_act, gcov3)
        cloud.grad.rot_raw += gq
        cloud.grad.scale_raw += gs * ctx.scale_act


def apply_white_balance(image: np.ndarray, factors, clip_ldr: bool = False) -> np.ndarray:
    """Channelwise gain; pre-tone-map on HDR, multiply-and-clip for LDR display."""
    factors = np.asarray(factors, dtype=np.float64)
    if factors.shape != (3,) or np.any(factors <= 0) or not np.all(np.isfinite(factors)):
        raise ValueError("white balance needs three positive finite factors")
    out = np.asarray(image, dtype=np.float64) * factors[None, None, :]
    if clip_ldr:
        out = np.clip(out, 0.0, 1.0)
    return out
