"""Finite-difference verification of every analytic gradient the trainer uses.

Modulation weights are training-time constants, so each parameter group is
checked against the objective it actually descends: scene and tone-mapper
parameters against the frozen-modulation reconstruction objective (plus the
unit-exposure anchor), the uncertainty head against the uncertainty objective.

The forward is piecewise smooth. Both half-evaluations of each central
difference record a digest of every discrete branch (splat inclusion, sigma
clamp, tone clip, uncertainty floor, ReLU signs, L1 signs); parameters whose
two evaluations disagree straddle a branch boundary and are excluded, as are
entries with |gradient| below 1e-8 on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .configio import SceneConfig
from .decisions import DecisionLog
from .field import GaussianCloud
from .losses import LossWeights, modulation_weights
from .pipeline import RenderOptions
from .scenegen import generate_scene
from .tonemap import ToneMapperBank
from .trainer import BANK_GROUPS, CLOUD_GROUPS, objective

FD_STEP = 1e-3
SMALL_GRAD = 1e-8
DEFAULT_MEDIAN_TOL = 1e-4
P99_FACTOR = 10.0  # p99 tolerance is 10x the median tolerance


@dataclass
class GroupCheck:
    group: str
    stage: int
    n_params: int
    n_checked: int
    n_boundary: int
    n_small: int
    median: float
    p99: float
    max: float

    def passes(self, median_tol: float = DEFAULT_MEDIAN_TOL) -> bool:
        if self.n_checked == 0:
            return True
        return self.median < median_tol and self.p99 < P99_FACTOR * median_tol


@dataclass
class CheckScene:
    cloud: GaussianCloud
    bank: ToneMapperBank
    cam: object
    t: float
    gt: np.ndarray
    weights: LossWeights
    options: RenderOptions


def build_check_scene(seed: int, gaussians: int = 20, image_size: int = 16) -> CheckScene:
    """Seeded random scene/bank/target kept clear of decision thresholds."""
    rng = np.random.default_rng(seed)
    sc = SceneConfig(
        gaussians=gaussians,
        image_size=image_size,
        views=1,
        base_scale=0.12,
        opacity_min=0.3,
        opacity_max=0.8,
        irr_min=0.05,
        irr_max=8.0,
        scene_seed=int(rng.integers(2**31)),
    )
    cloud, cams = generate_scene(sc)
    d = 4
    cloud.feature = rng.normal(0.0, 0.5, size=(cloud.count, d))
    cloud.grad.feature = np.zeros_like(cloud.feature)
    bank = ToneMapperBank(feature_dim=d, seed=int(rng.integers(2**31)))
    gt = rng.uniform(0.05, 0.95, size=(image_size, image_size, 3))
    return CheckScene(
        cloud=cloud,
        bank=bank,
        cam=cams[0],
        t=2.0,
        gt=gt,
        weights=LossWeights(),
        options=RenderOptions(),
    )


def _group_value_fn(scene: CheckScene, group: str, frozen_w3: np.ndarray):
    """The scalar objective this group's training gradient differentiates."""

    def f_recon():
        decisions = DecisionLog()
        report, _ = objective(
            scene.cloud,
            scene.bank,
            scene.cam,
            scene.t,
            scene.gt,
            scene.weights,
            scene.options,
            unc_enabled=False,
            use_unit_exposure=True,
            frozen_w3=frozen_w3,
            decisions=decisions,
        )
        return report.total, decisions.digest()

    def f_unc():
        decisions = DecisionLog()
        report, _ = objective(
            scene.cloud,
            scene.bank,
            scene.cam,
            scene.t,
            scene.gt,
            scene.weights,
            scene.options,
            unc_enabled=True,
            use_unit_exposure=False,
            frozen_w3=frozen_w3,
            decisions=decisions,
        )
        return report.lunc, decisions.digest()

    return f_unc if group == "rho" else f_recon


def _analytic_gradients(scene: CheckScene):
    scene.cloud.zero_grad()
    scene.bank.zero_grad()
    objective(
        scene.cloud,
        scene.bank,
        scene.cam,
        scene.t,
        scene.gt,
        scene.weights,
        scene.options,
        unc_enabled=True,
        use_unit_exposure=True,
        backward=True,
    )
    grads: dict[str, list[np.ndarray]] = {g: [] for g in CLOUD_GROUPS + BANK_GROUPS}
    params: dict[str, list[np.ndarray]] = {g: [] for g in CLOUD_GROUPS + BANK_GROUPS}
    for name, p, g in scene.cloud.param_items():
        params[name].append(p)
        grads[name].append(g.copy())
    for name, p, g in scene.bank.param_items():
        params[name].append(p)
        grads[name].append(g.copy())
    return params, grads


def check_group(
    scene: CheckScene,
    group: str,
    params: list[np.ndarray],
    analytic: list[np.ndarray],
    frozen_w3: np.ndarray,
    stage: int,
    h: float = FD_STEP,
    max_samples: int | None = None,
    rng=None,
) -> GroupCheck:
    value_fn = _group_value_fn(scene, group, frozen_w3)
    rel_errs = []
    n_boundary = n_small = 0
    total = sum(p.size for p in params)
    coords = [(ai, i) for ai, p in enumerate(params) for i in range(p.size)]
    if max_samples is not None and len(coords) > max_samples:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_samples, replace=False)
        coords = [coords[int(i)] for i in np.sort(pick)]
    for ai, i in coords:
        flat = params[ai].reshape(-1)
        a = float(analytic[ai].reshape(-1)[i])
        old = flat[i]
        flat[i] = old + h
        f_plus, d_plus = value_fn()
        flat[i] = old - h
        f_minus, d_minus = value_fn()
        flat[i] = old
        if d_plus != d_minus:
            n_boundary += 1
            continue
        fd = (f_plus - f_minus) / (2.0 * h)
        denom = max(abs(a), abs(fd))
        if denom < SMALL_GRAD:
            n_small += 1
            continue
        rel_errs.append(abs(a - fd) / denom)
    rel = np.asarray(rel_errs)
    return GroupCheck(
        group=group,
        stage=stage,
        n_params=total,
        n_checked=len(rel),
        n_boundary=n_boundary,
        n_small=n_small,
        median=float(np.median(rel)) if len(rel) else 0.0,
        p99=float(np.percentile(rel, 99)) if len(rel) else 0.0,
        max=float(np.max(rel)) if len(rel) else 0.0,
    )


def run_gradcheck(
    seed: int,
    h: float = FD_STEP,
    stages=(1, 2),
    max_samples: int | None = None,
) -> list[GroupCheck]:
    """Check every parameter group in the requested training stages."""
    results = []
    for stage in stages:
        scene = build_check_scene(seed)
        scene.bank.residual_enabled = stage >= 2
        _, base = objective(
            scene.cloud,
            scene.bank,
            scene.cam,
            scene.t,
            scene.gt,
            scene.weights,
            scene.options,
            unc_enabled=True,
            use_unit_exposure=True,
        )
        frozen_w3 = modulation_weights(base.u3d, base.u2d)
        params, analytic = _analytic_gradients(scene)
        sample_rng = np.random.default_rng(seed + 1000 * stage)
        for group in CLOUD_GROUPS + BANK_GROUPS:
            if group == "dg" and stage == 1:
                # residual disabled: training gradients must vanish identically
                flat = np.concatenate([g.reshape(-1) for g in analytic[group]])
                if np.any(flat != 0.0):
                    raise AssertionError("residual MLP received gradients in stage 1")
                results.append(
                    GroupCheck(
                        group=group,
                        stage=stage,
                        n_params=int(flat.size),
                        n_checked=0,
                        n_boundary=0,
                        n_small=int(flat.size),
                        median=0.0,
                        p99=0.0,
                        max=0.0,
                    )
                )
                continue
            results.append(
                check_group(
                    scene,
                    group,
                    params[group],
                    analytic[group],
                    frozen_w3,
                    stage,
                    h=h,
                    max_samples=max_samples,
                    rng=sample_rng,
                )
            )
    return results


def format_results(results: list[GroupCheck]) -> str:
    lines = [
        f"{'stage':>5s} {'group':>10s} {'params':>7s} {'checked':>8s} "
        f"{'boundary':>8s} {'small':>6s} {'median':>10s} {'p99':>10s} {'max':>10s}"
    ]
    for r in results:
        lines.append(
            f"{r.stage:5d} {r.group:>10s} {r.n_params:7d} {r.n_checked:8d} "
            f"{r.n_boundary:8d} {r.n_small:6d} {r.median:10.2e} {r.p99:10.2e} {r.max:10.2e}"
        )
    return "\n".join(lines)
