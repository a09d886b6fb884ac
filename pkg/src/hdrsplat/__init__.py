"""CPU differentiable Gaussian splatting for HDR reconstruction from
multi-exposure LDR captures, with joint 3D/2D local tone mapping and
uncertainty-modulated training."""

from .configio import EngineConfig, read_config
from .core_math import Camera, Splat2D, covariance_from_rs, project_gaussian, quaternion_to_rotation
from .dataset import Dataset, load_dataset
from .field import CloudConfig, GaussianCloud, init_from_points
from .losses import LossReport, LossWeights, merge_ldr
from .metrics import EvalReport, evaluate, hdr_psnr, mu_law, psnr
from .pipeline import RenderOptions, RenderOutput, apply_white_balance, render_view
from .scenegen import emit_dataset, generate_scene
from .tonemap import ToneMapperBank
from .trainer import Trainer, train

__all__ = [
    "Camera",
    "CloudConfig",
    "Dataset",
    "EngineConfig",
    "EvalReport",
    "GaussianCloud",
    "LossReport",
    "LossWeights",
    "RenderOptions",
    "RenderOutput",
    "Splat2D",
    "ToneMapperBank",
    "Trainer",
    "apply_white_balance",
    "covariance_from_rs",
    "emit_dataset",
    "evaluate",
    "generate_scene",
    "hdr_psnr",
    "init_from_points",
    "load_dataset",
    "merge_ldr",
    "mu_law",
    "project_gaussian",
    "psnr",
    "quaternion_to_rotation",
    "read_config",
    "render_view",
    "train",
]
