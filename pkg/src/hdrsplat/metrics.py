"""PSNR, SSIM scores, mu-law HDR PSNR, and the test-split evaluation harness.

HDR predictions are scored in a display-referred domain: both prediction and
ground truth are normalized by the ground-truth maximum, clipped to [0, 1],
mu-law compressed, then compared with PSNR. Joint rescaling of both images
therefore cancels, which matches the fact that the absolute HDR scale is
observable only through the unit-exposure anchor.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    Dataset,
    NOVEL_EXPOSURE_INDICES,
    TRAIN_EXPOSURE_INDICES,
    hdr_name,
    ldr_name,
)
from .field import GaussianCloud
from .losses import merge_ldr, ssim_map
from .pipeline import RenderOptions, render_view
from .tonemap import ToneMapperBank

MU_LAW_DEFAULT = 5000.0
LDR_SOURCES = ("i3d", "i2d", "merged")
TRACKS = ("ldr-oe", "ldr-ne", "hdr")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def mu_law(x: np.ndarray, mu: float = MU_LAW_DEFAULT) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        raise ValueError("mu_law expects input normalized to [0, 1]")
    return np.log1p(mu * np.clip(x, 0.0, 1.0)) / np.log1p(mu)


def hdr_psnr(pred_hdr: np.ndarray, gt_hdr: np.ndarray, mu: float = MU_LAW_DEFAULT) -> float:
    pred_hdr = np.asarray(pred_hdr, dtype=np.float64)
    gt_hdr = np.asarray(gt_hdr, dtype=np.float64)
    if pred_hdr.shape != gt_hdr.shape:
        raise ValueError("HDR image shapes differ")
    m = float(np.max(gt_hdr))
    if m <= 0:
        raise ValueError("ground-truth HDR image has no positive values")
    a = mu_law(np.clip(pred_hdr / m, 0.0, 1.0), mu)
    b = mu_law(np.clip(gt_hdr / m, 0.0, 1.0), mu)
    return psnr(a, b)


def ssim_score(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(ssim_map(a, b)))


@dataclass
class TrackResult:
    psnr_mean: float
    ssim_mean: float
    per_view: list[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    ldr_source: str
    tracks: dict[str, TrackResult] = field(default_factory=dict)


def _mean(vals):
    return float(np.mean(vals)) if vals else float("nan")


def evaluate(
    cloud: GaussianCloud,
    bank: ToneMapperBank,
    dataset: Dataset,
    tracks=TRACKS,
    ldr_source: str = "merged",
    options: RenderOptions | None = None,
    views=None,
) -> EvalReport:
    """Render every test view at every track exposure and score it.

    LDR tracks compare the requested source (i3d | i2d | merged) against the
    stored LDR images; the HDR track scores rendered irradiance against the
    HDR ground truth via mu-law PSNR.
    """
    if ldr_source not in LDR_SOURCES:
        raise ValueError(f"ldr_source must be one of {LDR_SOURCES}")
    for tr in tracks:
        if tr not in TRACKS:
            raise ValueError(f"unknown track {tr!r}")
    options = options or RenderOptions()
    view_list = list(views) if views is not None else list(dataset.test_views)
    if not view_list:
        raise ValueError("no test views to evaluate")

    missing = []
    for tr in tracks:
        if tr == "hdr":
            missing += [
                os.path.join(dataset.root, hdr_name(v))
                for v in view_list
                if v not in dataset.hdr
            ]
        else:
            idxs = TRAIN_EXPOSURE_INDICES if tr == "ldr-oe" else NOVEL_EXPOSURE_INDICES
            missing += [
                os.path.join(dataset.root, ldr_name(v, k))
                for v in view_list
                for k in idxs
                if (v, k) not in dataset.ldr
            ]
    if missing:
        raise ValueError(
            "evaluation ground truth missing:\n  " + "\n  ".join(missing)
        )

    report = EvalReport(ldr_source=ldr_source)
    renders: dict[tuple[int, int], object] = {}

    def rendered(v, k):
        if (v, k) not in renders:
            renders[(v, k)] = render_view(
                cloud, bank, dataset.cameras[v], dataset.exposure_time(k), options
            )
        return renders[(v, k)]

    for tr in tracks:
        rows = []
        if tr == "hdr":
            for v in view_list:
                ro = rendered(v, TRAIN_EXPOSURE_INDICES[0])
                gt = dataset.hdr[v]
                m = float(np.max(gt))
                pred_n = np.clip(ro.e_hdr / m, 0.0, 1.0)
                gt_n = np.clip(gt / m, 0.0, 1.0)
                rows.append(
                    {
                        "view": v,
                        "psnr": hdr_psnr(ro.e_hdr, gt),
                        "ssim": ssim_score(mu_law(pred_n), mu_law(gt_n)),
                    }
                )
        else:
            idxs = TRAIN_EXPOSURE_INDICES if tr == "ldr-oe" else NOVEL_EXPOSURE_INDICES
            for v in view_list:
                for k in idxs:
                    ro = rendered(v, k)
                    if ldr_source == "i3d":
                        img = ro.i3d
                    elif ldr_source == "i2d":
                        img = ro.i2d
                    else:
                        img = merge_ldr(ro.i3d, ro.i2d, ro.u3d, ro.u2d)
                    gt = dataset.ldr[(v, k)]
                    rows.append(
                        {
                            "view": v,
                            "exposure": k,
                            "psnr": psnr(img, gt),
                            "ssim": ssim_score(img, gt),
                        }
                    )
        report.tracks[tr] = TrackResult(
            psnr_mean=_mean([r["psnr"] for r in rows]),
            ssim_mean=_mean([r["ssim"] for r in rows]),
            per_view=rows,
        )
    return report


def write_report(report: EvalReport, path: str):
    """Line-delimited JSON records plus a human-readable table."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for tr, res in report.tracks.items():
            f.write(
                json.dumps(
                    {
                        "track": tr,
                        "source": report.ldr_source,
                        "psnr": res.psnr_mean,
                        "ssim": res.ssim_mean,
                    }
                )
                + "\n"
            )
        for tr, res in report.tracks.items():
            for row in res.per_view:
                f.write(json.dumps({"track": tr, **row}) + "\n")
    with open(path + ".txt", "w", encoding="utf-8") as f:
        f.write(format_report(report))


def format_report(report: EvalReport) -> str:
    lines = [f"LDR source: {report.ldr_source}"]
    lines.append(f"{'track':8s} {'PSNR (dB)':>10s} {'SSIM':>8s}")
    for tr, res in report.tracks.items():
        lines.append(f"{tr:8s} {res.psnr_mean:10.3f} {res.ssim_mean:8.4f}")
    return "\n".join(lines) + "\n"
