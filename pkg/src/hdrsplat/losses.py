"""Reconstruction, uncertainty, and modulation losses with manual adjoints.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
C2 = 0.03^2, reflection padding, channel-averaged. DSSIM = (1 - SSIM) / 2.
All loss terms are computed per pixel and averaged last, so the uncertainty
modulation stays spatially adaptive.

The backward helpers are exact adjoints of the forward maps, including the
adjoint of reflection padding (border gradients fold back onto their source
pixels rather than being re-filtered).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
_WIN = 11
_PAD = _WIN // 2


def _gaussian_window(size: int = _WIN, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()

_KERNEL = _gaussian_window()
_pad_index_cache: dict[tuple[int, int], np.ndarray] = {}


def _pad_index(h: int, w: int) -> np.ndarray:
    key = (h, w)
    if key not in _pad_index_cache:
        _pad_index_cache[key] = np.pad(
            np.arange(h * w).reshape(h, w), _PAD, mode="reflect"
        ).ravel()
    return _pad_index_cache[key]


def _filt(x: np.ndarray) -> np.ndarray:
    """Separable Gaussian filtering with reflection padding (h, w) -> (h, w)."""
    xp = np.pad(x, _PAD, mode="reflect")
    t = correlate1d(xp, _KERNEL, axis=0, mode="constant", cval=0.0)
    t = correlate1d(t, _KERNEL, axis=1, mode="constant", cval=0.0)
    return t[_PAD:-_PAD, _PAD:-_PAD]


def _filt_adjoint(g: np.ndarray) -> np.ndarray:
    """Exact adjoint of _filt (kernel symmetric, pad transposed by scatter-add)."""
    h, w = g.shape
    gp = np.zeros((h + 2 * _PAD, w + 2 * _PAD))
    gp[_PAD:-_PAD, _PAD:-_PAD] = g
    gp = correlate1d(gp, _KERNEL, axis=0, mode="constant", cval=0.0)
    gp = correlate1d(gp, _KERNEL, axis=1, mode="constant", cval=0.0)
    out = np.zeros(h * w)
    np.add.at(out, _pad_index(h, w), gp.ravel())
    return out.reshape(h, w)


def _ssim_fields(a: np.ndarray, b: np.ndarray):
    """Filtered moments and SSIM factor maps for one channel pair."""
    ma, mb = _filt(a), _filt(b)
    paa, pbb, pab = _filt(a * a), _filt(b * b), _filt(a * b)
    a1 = 2.0 * ma * mb + SSIM_C1
    a2 = 2.0 * (pab - ma * mb) + SSIM_C2
    b1 = ma * ma + mb * mb + SSIM_C1
    b2 = (paa - ma * ma) + (pbb - mb * mb) + SSIM_C2
    return ma, mb, a1, a2, b1, b2


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] < 1:
        raise ValueError("expected (h, w, c) images")


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM in [-1, 1], averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    out = np.zeros(a.shape[:2])
    for c in range(a.shape[2]):
        _, _, a1, a2, b1, b2 = _ssim_fields(a[:, :, c], b[:, :, c])
        out += (a1 * a2) / (b1 * b2)
    return out / a.shape[2]


def ssim_map_backward(a: np.ndarray, b: np.ndarray, grad_map: np.ndarray) -> np.ndarray:
    """dL/da of sum(grad_map * ssim_map(a, b)); exact adjoint of the forward."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    nch = a.shape[2]
    grad_a = np.zeros_like(a)
    for c in range(nch):
        ac, bc = a[:, :, c], b[:, :, c]
        ma, mb, a1, a2, b1, b2 = _ssim_fields(ac, bc)
        k = grad_map / nch
        s = (a1 * a2) / (b1 * b2)
        inv = 1.0 / (b1 * b2)
        d_ma = k * (2.0 * mb * (a2 - a1) * inv - 2.0 * ma * s * (1.0 / b1 - 1.0 / b2))
        d_paa = k * (-s / b2)
        d_pab = k * (2.0 * a1 * inv)
        grad_a[:, :, c] = (
            _filt_adjoint(d_ma)
            + _filt_adjoint(d_paa) * 2.0 * ac
            + _filt_adjoint(d_pab) * bc
        )
    return grad_a


def dssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (1.0 - ssim_map(a, b)) / 2.0


@dataclass
class LossWeights:
    lambda_d: float = 0.2
    lambda_u: float = 0.5
    lambda_e: float = 0.5
    beta: float | None = None  # set: replace modulation with a fixed 3D/2D mix

    def __post_init__(self):
        if not 0.0 <= self.lambda_d <= 1.0:
            raise ValueError("lambda_d must lie in [0, 1]")
        if self.beta is not None and not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


@dataclass
class LossReport:
    l3d: float = 0.0
    l2d: float = 0.0
    l3d_unc: float = 0.0
    l2d_unc: float = 0.0
    lgs: float = 0.0
    lunc: float = 0.0
    le: float = 0.0
    total: float = 0.0
    dssim3d: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    dssim2d: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    modulation: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]


def recon_loss(img: np.ndarray, gt: np.ndarray, w_d: float):
    """DSSIM/L1 mix: returns (scalar, per-pixel map, ssim map)."""
    img = np.asarray(img, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_pair(img, gt)
    smap = ssim_map(img, gt)
    l1 = np.mean(np.abs(img - gt), axis=2)
    m = w_d * (1.0 - smap) / 2.0 + (1.0 - w_d) * l1
    return float(np.mean(m)), m, smap


def recon_loss_backward(
    img: np.ndarray, gt: np.ndarray, w_d: float, grad_map: np.ndarray
) -> np.ndarray:
    """dL/dimg for L = sum(grad_map * recon map)."""
    img = np.asarray(img, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    nch = img.shape[2]
    grad = ssim_map_backward(img, gt, grad_map * (-w_d / 2.0))
    grad += ((1.0 - w_d) / nch) * grad_map[:, :, None] * np.sign(img - gt)
    return grad


def uncertainty_loss(dssim: np.ndarray, u: np.ndarray, lambda_u: float) -> float:
    """mean(dssim / (2 u^2) + lambda_u ln u); dssim is a constant here."""
    if dssim.shape != u.shape:
        raise ValueError("dssim/uncertainty shape mismatch")
    return float(np.mean(dssim / (2.0 * u * u) + lambda_u * np.log(u)))


def uncertainty_loss_grad_u(dssim: np.ndarray, u: np.ndarray, lambda_u: float) -> np.ndarray:
    """d uncertainty_loss / du, per pixel (dssim held constant)."""
    if dssim.shape != u.shape:
        raise ValueError("dssim/uncertainty shape mismatch")
    n = dssim.size
    return (-dssim / (u * u * u) + lambda_u / u) / n


def modulation_weights(u3d: np.ndarray, u2d: np.ndarray, scalar: bool = False):
    """Per-pixel (or per-image) weight on the 3D-path loss: U2d^2/(U3d^2+U2d^2)."""
    if u3d.shape != u2d.shape:
        raise ValueError("uncertainty map shapes differ")
    if scalar:
        a = float(np.mean(u3d)) ** 2
        b = float(np.mean(u2d)) ** 2
        return np.full_like(u3d, b / (a + b))
    sq3, sq2 = u3d * u3d, u2d * u2d
    return sq2 / (sq3 + sq2)


def joint_modulated_loss(
    map3d: np.ndarray,
    map2d: np.ndarray,
    u3d: np.ndarray,
    u2d: np.ndarray,
    scalar: bool = False,
):
    """Uncertainty-modulated mix of the two recon maps; U maps are constants.

    Returns (scalar loss, weight-on-3d map).
    """
    if not (map3d.shape == map2d.shape == u3d.shape == u2d.shape):
        raise ValueError("loss map shapes differ")
    w3 = modulation_weights(u3d, u2d, scalar=scalar)
    return float(np.mean(w3 * map3d + (1.0 - w3) * map2d)), w3


def merge_ldr(i3d: np.ndarray, i2d: np.ndarray, u3d: np.ndarray, u2d: np.ndarray) -> np.ndarray:
    """Confidence-weighted pixelwise blend of the dual LDR renders."""
    if i3d.shape != i2d.shape:
        raise ValueError("LDR shapes differ")
    if u3d.shape != u2d.shape or u3d.shape != i3d.shape[:2]:
        raise ValueError("uncertainty map shapes differ")
    w3 = modulation_weights(u3d, u2d)[:, :, None]
    return w3 * i3d + (1.0 - w3) * i2d


def total_loss(
    lgs: float,
    lunc: float,
    le: float,
    weights: LossWeights,
    l3d: float = 0.0,
    l2d: float = 0.0,
    l3d_unc: float = 0.0,
    l2d_unc: float = 0.0,
    dssim3d=None,
    dssim2d=None,
    modulation=None,
) -> LossReport:
    """Assemble the scalar objective lgs + lunc + lambda_e * le into a report."""
    total = lgs + lunc + weights.lambda_e * le
    return LossReport(
        l3d=l3d,
        l2d=l2d,
        l3d_unc=l3d_unc,
        l2d_unc=l2d_unc,
        lgs=lgs,
        lunc=lunc,
        le=le,
        total=float(total),
        dssim3d=dssim3d,
        dssim2d=dssim2d,
        modulation=modulation,
    )
