"""Two-stage training loop: sampling, rendering, losses, stop-gradient wiring.

Stage 1 trains with the residual mapper disabled (global tone mapping only);
stage 2 enables it. Reconstruction gradients flow through both rendering
paths into the scene and the tone mappers; uncertainty-loss gradients reach
only the uncertainty head. Runs are bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .configio import EngineConfig
from .dataset import Dataset, TRAIN_EXPOSURE_INDICES
from .field import CloudConfig, GaussianCloud, init_from_points
from .losses import (
    LossWeights,
    joint_modulated_loss,
    merge_ldr,
    modulation_weights,
    recon_loss,
    recon_loss_backward,
    total_loss,
    uncertainty_loss,
    uncertainty_loss_grad_u,
)
from .metrics import psnr
from .optim import AdamState, LrSchedule, adam_step
from .pipeline import RenderGrads, RenderOptions, render_view, render_view_backward
from .tonemap import ToneMapperBank

CLOUD_GROUPS = ("position", "rotation", "scale", "opacity", "irradiance", "features")
BANK_GROUPS = ("g", "dg", "rho")


class TrainDivergence(RuntimeError):
    """Non-finite loss; carries the diagnostic context of the failing step."""

    def __init__(self, iteration, view, exposure, report):
        super().__init__(
            f"non-finite loss at iteration {iteration} "
            f"(view {view}, exposure index {exposure}): "
            f"l3d={report.l3d!r} l2d={report.l2d!r} lunc={report.lunc!r} "
            f"le={report.le!r} total={report.total!r}"
        )
        self.iteration = iteration
        self.view = view
        self.exposure = exposure
        self.report = report


def assign_exp1(train_views, rng) -> dict[int, int]:
    """Fixed exposure per view: seeded permutations of {t1, t3, t5} tiled."""
    assignment = {}
    pool: list[int] = []
    for v in train_views:
        if not pool:
            pool = [TRAIN_EXPOSURE_INDICES[i] for i in rng.permutation(3)]
        assignment[v] = pool.pop(0)
    return assignment


def sample_training_example(dataset: Dataset, mode: str, rng, assignment=None):
    """Draw (view id, exposure index in 1..5) per the Exp-1 / Exp-3 protocol."""
    views = dataset.train_views
    if not views:
        raise ValueError("dataset has no training views")
    view = views[int(rng.integers(len(views)))]
    if mode == "exp1":
        if assignment is None:
            raise ValueError("exp1 sampling needs a fixed view->exposure assignment")
        return view, assignment[view]
    if mode == "exp3":
        return view, TRAIN_EXPOSURE_INDICES[int(rng.integers(3))]
    raise ValueError(f"unknown exposure mode {mode!r}")


def objective(
    cloud: GaussianCloud,
    bank: ToneMapperBank,
    cam,
    t: float,
    gt: np.ndarray,
    weights: LossWeights,
    options: RenderOptions,
    scalar_modulation: bool = False,
    unc_enabled: bool = True,
    use_unit_exposure: bool = True,
    frozen_w3: np.ndarray | None = None,
    decisions=None,
    backward: bool = False,
    unc_features: bool = False,
):
    """One forward (optionally + backward) pass of the full training objective.

    Modulation weights are training-time constants: they are computed from the
    current uncertainties (or taken from ``frozen_w3``) and never propagated.
    Returns (LossReport, RenderOutput).
    """
    ro = render_view(cloud, bank, cam, t, options, decisions=decisions)
    if decisions is not None:
        decisions.add_bits(ro.i3d > gt)
        decisions.add_bits(ro.i2d > gt)

    l3d, m3d, ssim3 = recon_loss(ro.i3d, gt, weights.lambda_d)
    l2d, m2d, ssim2 = recon_loss(ro.i2d, gt, weights.lambda_d)
    dssim3 = (1.0 - ssim3) / 2.0
    dssim2 = (1.0 - ssim2) / 2.0

    if weights.beta is not None:
        w3 = np.full_like(m3d, weights.beta)
        lgs = float(np.mean(w3 * m3d + (1.0 - w3) * m2d))
    elif frozen_w3 is not None:
        w3 = frozen_w3
        lgs = float(np.mean(w3 * m3d + (1.0 - w3) * m2d))
    else:
        lgs, w3 = joint_modulated_loss(m3d, m2d, ro.u3d, ro.u2d, scalar=scalar_modulation)

    l3d_unc = l2d_unc = 0.0
    if unc_enabled:
        l3d_unc = uncertainty_loss(dssim3, ro.u3d, weights.lambda_u)
        l2d_unc = uncertainty_loss(dssim2, ro.u2d, weights.lambda_u)
    lunc = l3d_unc + l2d_unc

    le = bank.unit_exposure_loss() if use_unit_exposure else 0.0

    report = total_loss(
        lgs,
        lunc,
        le,
        weights,
        l3d=l3d,
        l2d=l2d,
        l3d_unc=l3d_unc,
        l2d_unc=l2d_unc,
        dssim3d=dssim3,
        dssim2d=dssim2,
        modulation=w3,
    )

    if backward:
        npix = float(m3d.size)
        gi3d = recon_loss_backward(ro.i3d, gt, weights.lambda_d, w3 / npix)
        gi2d = recon_loss_backward(ro.i2d, gt, weights.lambda_d, (1.0 - w3) / npix)
        render_view_backward(cloud, bank, ro, RenderGrads(i3d=gi3d, i2d=gi2d))
        if unc_enabled:
            gu3 = uncertainty_loss_grad_u(dssim3, ro.u3d, weights.lambda_u)
            gu2 = uncertainty_loss_grad_u(dssim2, ro.u2d, weights.lambda_u)
            render_view_backward(
                cloud,
                bank,
                ro,
                RenderGrads(u3d=gu3, u2d=gu2),
                mode="rho_only",
                unc_features=unc_features,
            )
        if use_unit_exposure:
            bank.unit_exposure_backward(scale=weights.lambda_e)
    return report, ro


@dataclass
class TrainLog:
    path: str | None = None
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict):
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(row) + "\n")


class Trainer:
    def __init__(
        self,
        cfg: EngineConfig,
        dataset: Dataset,
        out_dir: str | None = None,
        cloud: GaussianCloud | None = None,
        bank: ToneMapperBank | None = None,
    ):
        self.cfg = cfg
        self.dataset = dataset
        self.out_dir = out_dir
        tr = cfg.train
        self.weights = tr.weights
        self.options = cfg.render
        self.rng = np.random.default_rng(tr.seed)
        self.iteration = 0
        self.stage_boundary = tr.stage_boundary()

        if cloud is None:
            cloud_cfg = CloudConfig(
                feature_dim=tr.feature_dim,
                init_feature_std=tr.init_feature_std,
                init_scale=tr.init_scale,
                init_opacity=tr.init_opacity,
            )
            if dataset.points is not None:
                cloud = init_from_points(
                    dataset.points, dataset.point_colors, cloud_cfg, seed=tr.seed
                )
            else:
                pts_rng = np.random.default_rng((tr.seed, "points"))
                pts = pts_rng.uniform(
                    -cfg.scene.extent, cfg.scene.extent, size=(cfg.scene.gaussians, 3)
                )
                cloud = init_from_points(pts, None, cloud_cfg, seed=tr.seed)
        self.cloud = cloud
        self.bank = bank or ToneMapperBank(
            feature_dim=cloud.feature_dim, seed=tr.seed, residual_enabled=False
        )
        if self.bank.feature_dim != cloud.feature_dim:
            raise ValueError("bank/cloud feature dimensions disagree")

        total = max(tr.total_iters, 1)
        lr = cfg.lr
        self.schedule = LrSchedule()
        self.schedule.add("position", lr.position, lr.position_final, total)
        self.schedule.add("rotation", lr.rotation)
        self.schedule.add("scale", lr.scale)
        self.schedule.add("opacity", lr.opacity)
        self.schedule.add("irradiance", lr.irradiance)
        self.schedule.add("features", lr.features)
        for g in BANK_GROUPS:
            self.schedule.add(g, lr.tonemap, lr.tonemap_final, total)

        self.param_groups = self._collect_groups()
        self.opt_states = {
            name: AdamState.for_params([p for p, _ in pairs])
            for name, pairs in self.param_groups.items()
        }
        self.exp1_assignment = (
            assign_exp1(dataset.train_views, self.rng)
            if tr.exposure_mode == "exp1"
            else None
        )
        self.log = TrainLog(
            path=os.path.join(out_dir, "train_log.jsonl") if out_dir else None
        )
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

    def _collect_groups(self):
        groups: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {
            name: [] for name in CLOUD_GROUPS + BANK_GROUPS
        }
        for name, p, g in self.cloud.param_items():
            groups[name].append((p, g))
        for name, p, g in self.bank.param_items():
            groups[name].append((p, g))
        return groups

    # -- steps ---------------------------------------------------------------

    def sample_example(self):
        return sample_training_example(
            self.dataset, self.cfg.train.exposure_mode, self.rng, self.exp1_assignment
        )

    def train_step(self):
        tr = self.cfg.train
        view, k = self.sample_example()
        t = self.dataset.exposure_time(k)
        gt = self.dataset.ldr[(view, k)]
        cam = self.dataset.cameras[view]

        stage2 = self.iteration >= self.stage_boundary
        self.bank.residual_enabled = stage2
        unc_enabled = not tr.disable_unc_loss and (stage2 or tr.unc_in_stage1)

        self.cloud.zero_grad()
        self.bank.zero_grad()
        report, _ = objective(
            self.cloud,
            self.bank,
            cam,
            t,
            gt,
            self.weights,
            self.options,
            scalar_modulation=tr.scalar_modulation,
            unc_enabled=unc_enabled,
            use_unit_exposure=tr.use_unit_exposure_loss,
            backward=True,
            unc_features=tr.unc_grads_to_features,
        )
        if not np.isfinite(report.total):
            raise TrainDivergence(self.iteration, view, k, report)

        if tr.grad_clip > 0:
            for pairs in self.param_groups.values():
                sq = sum(float(np.sum(g * g)) for _, g in pairs)
                norm = np.sqrt(sq)
                if norm > tr.grad_clip:
                    for _, g in pairs:
                        g *= tr.grad_clip / norm

        for name, pairs in self.param_groups.items():
            lr = self.schedule.lr(name, self.iteration)
            adam_step(
                [p for p, _ in pairs],
                [g for _, g in pairs],
                self.opt_states[name],
                lr,
                group=name,
            )
        self.iteration += 1
        return report

    # -- orchestration ---------------------------------------------------------

    def probe_view(self):
        if self.dataset.test_views:
            return self.dataset.test_views[0]
        return self.dataset.train_views[0]

    def probe_psnr(self) -> float:
        v = self.probe_view()
        k = TRAIN_EXPOSURE_INDICES[1]  # t3
        if (v, k) not in self.dataset.ldr:
            return float("nan")
        ro = render_view(
            self.cloud, self.bank, self.dataset.cameras[v], self.dataset.exposure_time(k), self.options
        )
        merged = merge_ldr(ro.i3d, ro.i2d, ro.u3d, ro.u2d)
        return psnr(merged, self.dataset.ldr[(v, k)])

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            cloud=self.cloud,
            bank=self.bank,
            opt_states=self.opt_states,
            iteration=self.iteration,
            config_text=self.cfg.source_text,
        )

    def save(self, name: str):
        if not self.out_dir:
            return None
        path = os.path.join(self.out_dir, name)
        save_checkpoint(path, self.checkpoint())
        return path

    def run(self):
        tr = self.cfg.train
        final_path = None
        for _ in range(tr.total_iters):
            report = self.train_step()
            it = self.iteration
            if tr.eval_every > 0 and (it % tr.eval_every == 0 or it == tr.total_iters):
                self.log.append(
                    {
                        "iteration": it,
                        "l3d": report.l3d,
                        "l2d": report.l2d,
                        "lgs": report.lgs,
                        "lunc": report.lunc,
                        "le": report.le,
                        "total": report.total,
                        "lr_position": self.schedule.lr("position", it),
                        "lr_tonemap": self.schedule.lr("g", it),
                        "mean_w3d": float(np.mean(report.modulation)),
                        "probe_psnr": self.probe_psnr(),
                    }
                )
            if (
                tr.checkpoint_every > 0
                and it % tr.checkpoint_every == 0
                and it < tr.total_iters
            ):
                self.save(f"checkpoint_{it:06d}.ghdr")
        final_path = self.save("checkpoint_final.ghdr")
        return final_path


def train(cfg: EngineConfig, dataset: Dataset, out_dir: str | None):
    """Run the full schedule; returns (trainer, final checkpoint path)."""
    trainer = Trainer(cfg, dataset, out_dir)
    final_path = trainer.run()
    return trainer, final_path
