"""Differentiable front-to-back alpha blending of sorted 2D splats.

The payload is an arbitrary channel stack (irradiance, LDR color, context
features, uncertainty all ride the same blend), so one pass produces mutually
consistent maps sharing sigma weights and ordering.

Per-pixel semantics, applied in depth order:

    include splat i at pixel p iff  q_i(p) <= 9  (3-sigma ellipse)
                                and sigma_i(p) >= 1/255
                                and T(p) >= 1e-4  (transmittance cutoff)
    sigma_i(p) = min(alpha_i * exp(-q_i(p)/2), 0.99)
    out(p)    += payload_i * sigma_i(p) * T(p);  T(p) *= 1 - sigma_i(p)
    out(p)    += T_final(p) * background        (after the last splat)

The exhaustive path walks every splat against its ellipse bounding box; the
optional tiled path only adds a conservative per-tile cull and is
bit-identical. The backward pass replays the recorded blend in reverse and is
the exact adjoint of the forward conditional on the recorded branch decisions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .decisions import DecisionLog

log = logging.getLogger(__name__)

SIGMA_CLAMP = 0.99
SIGMA_SKIP = 1.0 / 255.0
TRANSMITTANCE_CUTOFF = 1e-4
ELLIPSE_CUTOFF = 9.0  # q = Delta^T cov2d^{-1} Delta at 3 sigma
DEFAULT_TILE = 16


def sort_splats(depths: np.ndarray) -> np.ndarray:
    """Depth-ascending stable order (ties keep input order)."""
    depths = np.asarray(depths, dtype=np.float64)
    if depths.size and not np.all(np.isfinite(depths)):
        raise ValueError("splat depths must be finite")
    return np.argsort(depths, kind="stable")


@dataclass
class SplatBlend:
    """One splat's contribution window, kept for the backward replay."""

    splat: int  # row in the sorted input arrays
    gaussian_index: int
    y0: int
    x0: int
    sigma: np.ndarray  # (hb, wb) effective sigma, 0 where not blended
    t_before: np.ndarray  # (hb, wb) transmittance before this splat
    clamped: np.ndarray  # (hb, wb) bool, sigma hit the 0.99 clamp

    @property
    def box(self):
        h, w = self.sigma.shape
        return (slice(self.y0, self.y0 + h), slice(self.x0, self.x0 + w))


@dataclass
class BlendRecord:
    """Everything the backward pass needs to replay a forward blend."""

    width: int
    height: int
    channels: int
    count: int  # number of input splats
    background: np.ndarray
    entries: list[SplatBlend] = field(default_factory=list)
    t_final: np.ndarray = None  # type: ignore[assignment]
    skipped_non_psd: int = 0

    def pixel_terms(self, x: int, y: int):
        """Ordered (gaussian_index, sigma, T_before) terms blended at a pixel."""
        terms = []
        for e in self.entries:
            hb, wb = e.sigma.shape
            if e.y0 <= y < e.y0 + hb and e.x0 <= x < e.x0 + wb:
                s = e.sigma[y - e.y0, x - e.x0]
                if s > 0.0:
                    terms.append((e.gaussian_index, s, e.t_before[y - e.y0, x - e.x0]))
        return terms


def _conic(cov: np.ndarray):
    """Inverse of a 2x2 covariance, or None when not positive definite."""
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    if not np.isfinite(det) or det <= 0.0 or a <= 0.0 or c <= 0.0:
        return None
    return a / det, -b / det, c / det  # conic (A, B, C) with q = A dx^2 + 2B dxdy + C dy^2


def _blend_one(
    entryix,
    mean,
    conic,
    bbox,
    alpha,
    payload_row,
    T,
    out,
    entries,
    gaussian_index,
    splat_row,
    decisions,
):
    x0, x1, y0, y1 = bbox
    A, B, C = conic
    xs = np.arange(x0, x1 + 1, dtype=np.float64) - mean[0]
    ys = np.arange(y0, y1 + 1, dtype=np.float64) - mean[1]
    dx = xs[None, :]
    dy = ys[:, None]
    q = A * dx * dx + 2.0 * B * dx * dy + C * dy * dy
    sigma_raw = alpha * np.exp(-0.5 * q)
    clamped = sigma_raw > SIGMA_CLAMP
    sigma = np.where(clamped, SIGMA_CLAMP, sigma_raw)
    t_crop = T[y0 : y1 + 1, x0 : x1 + 1]
    active = (q <= ELLIPSE_CUTOFF) & (sigma >= SIGMA_SKIP) & (t_crop >= TRANSMITTANCE_CUTOFF)
    if decisions is not None:
        decisions.add_token(entryix)
        decisions.add_bits(active)
        decisions.add_bits(clamped & active)
    if not active.any():
        return
    sigma_eff = np.where(active, sigma, 0.0)
    weight = sigma_eff * t_crop
    out[y0 : y1 + 1, x0 : x1 + 1, :] += weight[:, :, None] * payload_row[None, None, :]
    entries.append(
        SplatBlend(
            splat=splat_row,
            gaussian_index=gaussian_index,
            y0=y0,
            x0=x0,
            sigma=sigma_eff,
            t_before=t_crop.copy(),
            clamped=clamped & active,
        )
    )
    T[y0 : y1 + 1, x0 : x1 + 1] = t_crop * (1.0 - sigma_eff)


def _bboxes(mean2d, cov2d, width, height):
    """Integer AABBs of the 3-sigma ellipses, clipped to the image."""
    rx = 3.0 * np.sqrt(np.maximum(cov2d[:, 0, 0], 0.0))
    ry = 3.0 * np.sqrt(np.maximum(cov2d[:, 1, 1], 0.0))
    x0 = np.maximum(np.ceil(mean2d[:, 0] - rx), 0).astype(np.int64)
    x1 = np.minimum(np.floor(mean2d[:, 0] + rx), width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - ry), 0).astype(np.int64)
    y1 = np.minimum(np.floor(mean2d[:, 1] + ry), height - 1).astype(np.int64)
    return x0, x1, y0, y1


def rasterize_forward(
    mean2d: np.ndarray,
    cov2d: np.ndarray,
    opacity: np.ndarray,
    payload: np.ndarray,
    background: np.ndarray,
    width: int,
    height: int,
    gaussian_index: np.ndarray | None = None,
    tile_size: int | None = None,
    decisions: DecisionLog | None = None,
):
    """Blend depth-sorted splats into a (height, width, C) image.

    Inputs must already be in depth order. Returns (image, alpha, record).
    Splats with a non-positive-definite 2D covariance are skipped and counted.
    """
    mean2d = np.asarray(mean2d, dtype=np.float64)
    cov2d = np.asarray(cov2d, dtype=np.float64)
    opacity = np.asarray(opacity, dtype=np.float64)
    payload = np.atleast_2d(np.asarray(payload, dtype=np.float64))
    background = np.asarray(background, dtype=np.float64)
    m = mean2d.shape[0]
    if payload.shape[0] != m or opacity.shape[0] != m or cov2d.shape[0] != m:
        raise ValueError("splat array lengths disagree")
    c = payload.shape[1]
    if background.shape != (c,):
        raise ValueError("background width must match payload channels")

    out = np.zeros((height, width, c))
    T = np.ones((height, width))
    record = BlendRecord(
        width=width, height=height, channels=c, count=m, background=background.copy()
    )
    if gaussian_index is None:
        gaussian_index = np.arange(m)

    conics = []
    for i in range(m):
        cn = _conic(cov2d[i])
        if cn is None:
            record.skipped_non_psd += 1
        conics.append(cn)
    if record.skipped_non_psd:
        log.warning(
            "skipped %d splats with non-positive-definite 2D covariance",
            record.skipped_non_psd,
        )
    x0s, x1s, y0s, y1s = _bboxes(mean2d, cov2d, width, height)

    if tile_size is None:
        for i in range(m):
            if conics[i] is None or x1s[i] < x0s[i] or y1s[i] < y0s[i]:
                continue
            _blend_one(
                i,
                mean2d[i],
                conics[i],
                (x0s[i], x1s[i], y0s[i], y1s[i]),
                opacity[i],
                payload[i],
                T,
                out,
                record.entries,
                int(gaussian_index[i]),
                i,
                decisions,
            )
    else:
        if tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        for ty in range(0, height, tile_size):
            ty1 = min(ty + tile_size - 1, height - 1)
            for tx in range(0, width, tile_size):
                tx1 = min(tx + tile_size - 1, width - 1)
                for i in range(m):
                    if conics[i] is None:
                        continue
                    # conservative ellipse-vs-tile test via AABB overlap
                    bx0 = max(x0s[i], tx)
                    bx1 = min(x1s[i], tx1)
                    by0 = max(y0s[i], ty)
                    by1 = min(y1s[i], ty1)
                    if bx1 < bx0 or by1 < by0:
                        continue
                    _blend_one(
                        i,
                        mean2d[i],
                        conics[i],
                        (bx0, bx1, by0, by1),
                        opacity[i],
                        payload[i],
                        T,
                        out,
                        record.entries,
                        int(gaussian_index[i]),
                        i,
                        decisions,
                    )

    out += T[:, :, None] * background[None, None, :]
    record.t_final = T
    alpha = 1.0 - T
    return out, alpha, record


def rasterize_backward(
    grad_out: np.ndarray,
    record: BlendRecord,
    mean2d: np.ndarray,
    cov2d: np.ndarray,
    opacity: np.ndarray,
    payload: np.ndarray,
    sigma_channels: np.ndarray | None = None,
):
    """Exact reverse-mode gradients of rasterize_forward.

    ``sigma_channels`` optionally restricts which payload channels drive the
    sigma (geometry/opacity) gradients; payload gradients always cover every
    channel. This implements the stop-gradient wiring where a channel's loss
    may only reach its own payload (the uncertainty channel under L_unc).

    Returns (grad_payload, grad_opacity, grad_mean2d, grad_cov2d,
    grad_background), aligned with the forward splat arrays.
    """
    payload = np.atleast_2d(np.asarray(payload, dtype=np.float64))
    grad_out = np.asarray(grad_out, dtype=np.float64)
    m, c = payload.shape
    if grad_out.shape != (record.height, record.width, record.channels) or c != record.channels:
        raise ValueError("gradient/record shape mismatch")
    if m != record.count:
        raise ValueError("splat count does not match the forward record")
    if sigma_channels is None:
        sigma_channels = np.ones(c, dtype=bool)
    else:
        sigma_channels = np.asarray(sigma_channels, dtype=bool)

    grad_payload = np.zeros((m, c))
    grad_opacity = np.zeros(m)
    grad_mean2d = np.zeros((m, 2))
    grad_cov2d = np.zeros((m, 2, 2))
    grad_background = np.einsum("hwc,hw->c", grad_out, record.t_final)

    # suffix blend (everything composited behind the current splat), restricted
    # to the channels that are allowed to drive sigma gradients
    gsig = grad_out[:, :, sigma_channels]
    suffix = record.t_final[:, :, None] * record.background[sigma_channels][None, None, :]

    for e in reversed(record.entries):
        box = e.box
        g = grad_out[box]
        weight = e.sigma * e.t_before
        grad_payload[e.splat] += np.einsum("hwc,hw->c", g, weight)

        pay_sig = payload[e.splat][sigma_channels]
        dot_payload = np.einsum("hwc,c->hw", gsig[box], pay_sig)
        dot_suffix = np.einsum("hwc,hwc->hw", gsig[box], suffix[box])
        active = e.sigma > 0.0
        one_minus = 1.0 - e.sigma
        dsigma = np.where(active, e.t_before * dot_payload - dot_suffix / one_minus, 0.0)

        # sigma = min(alpha * G, 0.99): clamped pixels pass no gradient down
        dsigma_raw = np.where(e.clamped, 0.0, dsigma)
        usable = active & ~e.clamped
        G = np.where(usable, e.sigma / opacity[e.splat], 0.0)
        grad_opacity[e.splat] += float(np.sum(dsigma_raw * G))
        # q gradient: dG/dq = -G/2, sigma_raw = alpha*G  =>  dq = -sigma/2 * dsigma_raw
        dq = -0.5 * np.where(usable, e.sigma, 0.0) * dsigma_raw

        hb, wb = e.sigma.shape
        dx = (np.arange(e.x0, e.x0 + wb, dtype=np.float64) - mean2d[e.splat, 0])[None, :]
        dy = (np.arange(e.y0, e.y0 + hb, dtype=np.float64) - mean2d[e.splat, 1])[:, None]
        cn = _conic(cov2d[e.splat])
        A, B, C = cn
        # q = A dx^2 + 2B dxdy + C dy^2 with (dx, dy) = p - mean
        gx = dq * (2.0 * A * dx + 2.0 * B * dy)
        gy = dq * (2.0 * B * dx + 2.0 * C * dy)
        grad_mean2d[e.splat, 0] += -float(np.sum(gx))
        grad_mean2d[e.splat, 1] += -float(np.sum(gy))
        dA = float(np.sum(dq * dx * dx))
        dB = float(np.sum(dq * dx * dy))  # appears symmetrically, once per off-diagonal
        dC = float(np.sum(dq * dy * dy))
        dconic = np.array([[dA, dB], [dB, dC]])
        conic = np.array([[A, B], [B, C]])
        grad_cov2d[e.splat] += -conic @ dconic @ conic

        # roll the suffix forward so it now includes this splat
        suffix[box] = suffix[box] * one_minus[:, :, None] + weight[:, :, None] * pay_sig[
            None, None, :
        ]

    return grad_payload, grad_opacity, grad_mean2d, grad_cov2d, grad_background
