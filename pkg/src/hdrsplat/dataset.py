"""Multi-exposure dataset directory layout.

    root/
      cameras.txt     id fx fy cx cy width height r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz
      exposures.txt   five exposure times, one per line, strictly increasing
      crf.txt         ground-truth CRF descriptor (kind + parameters)
      split.txt       lines "train <view>" / "test <view>"
      points.txt      optional SfM stand-in: "x y z r g b" per seed point
      ldr/view_{V:03d}_exp_{K}.ppm   K in 1..5
      hdr/view_{V:03d}.pfm           optional HDR ground truth
      crf_fields/view_{V:03d}.pfm    per-view gamma fields (svgamma only)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .core_math import Camera
from .imgio import read_pfm, read_ppm, write_pfm, write_ppm

EXPOSURE_COUNT = 5
TRAIN_EXPOSURE_INDICES = (1, 3, 5)  # the {t1, t3, t5} protocol
NOVEL_EXPOSURE_INDICES = (2, 4)


def ldr_name(view: int, exp_index: int) -> str:
    return os.path.join("ldr", f"view_{view:03d}_exp_{exp_index}.ppm")


def hdr_name(view: int) -> str:
    return os.path.join("hdr", f"view_{view:03d}.pfm")


def crf_field_name(view: int) -> str:
    return os.path.join("crf_fields", f"view_{view:03d}.pfm")


@dataclass
class CrfDescriptor:
    kind: str  # linear | gamma | sigmoid_log | svgamma
    params: dict[str, float] = field(default_factory=dict)


@dataclass
class Dataset:
    root: str
    cameras: dict[int, Camera]
    exposures: np.ndarray  # (5,) strictly increasing
    train_views: list[int]
    test_views: list[int]
    ldr: dict[tuple[int, int], np.ndarray]  # (view, exp_index 1..5) -> (h, w, 3)
    hdr: dict[int, np.ndarray] = field(default_factory=dict)
    crf: CrfDescriptor | None = None
    points: np.ndarray | None = None  # (n, 3)
    point_colors: np.ndarray | None = None  # (n, 3) in [0, 1]

    @property
    def views(self) -> list[int]:
        return sorted(self.cameras)

    def exposure_time(self, exp_index: int) -> float:
        return float(self.exposures[exp_index - 1])


def write_cameras(path: str, cameras: dict[int, Camera]):
    with open(path, "w", encoding="ascii") as f:
        for vid in sorted(cameras):
            c = cameras[vid]
            r = c.world_to_camera
            t = c.translation
            row = [vid, repr(c.fx), repr(c.fy), repr(c.cx), repr(c.cy), c.width, c.height]
            for i in range(3):
                row.extend([repr(r[i, 0]), repr(r[i, 1]), repr(r[i, 2]), repr(t[i])])
            f.write(" ".join(str(x) for x in row) + "\n")


def read_cameras(path: str) -> dict[int, Camera]:
    cameras: dict[int, Camera] = {}
    with open(path, "r", encoding="ascii") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 19:
                raise ValueError(f"{path}:{lineno}: expected 19 fields, got {len(parts)}")
            vid = int(parts[0])
            fx, fy, cx, cy = (float(p) for p in parts[1:5])
            width, height = int(parts[5]), int(parts[6])
            vals = [float(p) for p in parts[7:19]]
            rot = np.array(
                [vals[0:3], vals[4:7], vals[8:11]]
            )
            trans = np.array([vals[3], vals[7], vals[11]])
            cameras[vid] = Camera(
                world_to_camera=rot,
                translation=trans,
                fx=fx,
                fy=fy,
                cx=cx,
                cy=cy,
                width=width,
                height=height,
            )
    if not cameras:
        raise ValueError(f"{path}: no cameras")
    return cameras


def write_exposures(path: str, exposures) -> None:
    exposures = np.asarray(exposures, dtype=np.float64)
    if exposures.shape != (EXPOSURE_COUNT,):
        raise ValueError("expected exactly 5 exposure times")
    if np.any(np.diff(exposures) <= 0) or np.any(exposures <= 0):
        raise ValueError("exposures must be positive and strictly increasing")
    with open(path, "w", encoding="ascii") as f:
        for t in exposures:
            f.write(repr(float(t)) + "\n")


def read_exposures(path: str) -> np.ndarray:
    with open(path, "r", encoding="ascii") as f:
        vals = [float(line.strip()) for line in f if line.strip()]
    arr = np.asarray(vals, dtype=np.float64)
    if arr.shape != (EXPOSURE_COUNT,):
        raise ValueError(f"{path}: expected 5 exposures, got {len(vals)}")
    if np.any(np.diff(arr) <= 0) or np.any(arr <= 0):
        raise ValueError(f"{path}: exposures must be positive and strictly increasing")
    return arr


def write_split(path: str, train_views, test_views):
    with open(path, "w", encoding="ascii") as f:
        for v in train_views:
            f.write(f"train {v}\n")
        for v in test_views:
            f.write(f"test {v}\n")


def read_split(path: str) -> tuple[list[int], list[int]]:
    train, test = [], []
    with open(path, "r", encoding="ascii") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in ("train", "test"):
                raise ValueError(f"{path}:{lineno}: expected 'train <id>' or 'test <id>'")
            (train if parts[0] == "train" else test).append(int(parts[1]))
    return train, test


def write_crf_descriptor(path: str, crf: CrfDescriptor):
    with open(path, "w", encoding="ascii") as f:
        f.write(crf.kind + "\n")
        for key in sorted(crf.params):
            f.write(f"{key} {repr(float(crf.params[key]))}\n")


def read_crf_descriptor(path: str) -> CrfDescriptor:
    with open(path, "r", encoding="ascii") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty CRF descriptor")
    kind = lines[0]
    if kind not in ("linear", "gamma", "sigmoid_log", "svgamma"):
        raise ValueError(f"{path}: unknown CRF kind {kind!r}")
    params = {}
    for ln in lines[1:]:
        key, val = ln.split()
        params[key] = float(val)
    return CrfDescriptor(kind=kind, params=params)


def write_points(path: str, points: np.ndarray, colors: np.ndarray):
    with open(path, "w", encoding="ascii") as f:
        for p, c in zip(points, colors):
            f.write(
                f"{repr(float(p[0]))} {repr(float(p[1]))} {repr(float(p[2]))} "
                f"{repr(float(c[0]))} {repr(float(c[1]))} {repr(float(c[2]))}\n"
            )


def read_points(path: str) -> tuple[np.ndarray, np.ndarray]:
    pts, cols = [], []
    with open(path, "r", encoding="ascii") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [float(p) for p in line.split()]
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 'x y z r g b'")
            pts.append(parts[:3])
            cols.append(parts[3:])
    if not pts:
        raise ValueError(f"{path}: no points")
    return np.asarray(pts), np.asarray(cols)


def load_dataset(root: str) -> Dataset:
    def p(*parts):
        return os.path.join(root, *parts)

    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset directory not found: {root}")
    cameras = read_cameras(p("cameras.txt"))
    exposures = read_exposures(p("exposures.txt"))
    train_views, test_views = read_split(p("split.txt"))
    missing = []
    for v in train_views + test_views:
        if v not in cameras:
            raise ValueError(f"split references view {v} with no camera")
    ldr: dict[tuple[int, int], np.ndarray] = {}
    for v in sorted(cameras):
        for k in range(1, EXPOSURE_COUNT + 1):
            fp = p(ldr_name(v, k))
            if os.path.exists(fp):
                ldr[(v, k)] = read_ppm(fp)
    for v in train_views:
        for k in TRAIN_EXPOSURE_INDICES:
            if (v, k) not in ldr:
                missing.append(p(ldr_name(v, k)))
    if missing:
        raise FileNotFoundError(
            "dataset split references missing LDR files:\n  " + "\n  ".join(missing)
        )
    hdr = {}
    for v in sorted(cameras):
        fp = p(hdr_name(v))
        if os.path.exists(fp):
            hdr[v] = read_pfm(fp)
    crf = None
    if os.path.exists(p("crf.txt")):
        crf = read_crf_descriptor(p("crf.txt"))
    points = colors = None
    if os.path.exists(p("points.txt")):
        points, colors = read_points(p("points.txt"))
    return Dataset(
        root=root,
        cameras=cameras,
        exposures=exposures,
        train_views=train_views,
        test_views=test_views,
        ldr=ldr,
        hdr=hdr,
        crf=crf,
        points=points,
        point_colors=colors,
    )


def save_dataset_images(root: str, view: int, ldr_by_exp: dict[int, np.ndarray], hdr=None):
    for k, img in ldr_by_exp.items():
        write_ppm(os.path.join(root, ldr_name(view, k)), img)
    if hdr is not None:
        write_pfm(os.path.join(root, hdr_name(view)), hdr)
