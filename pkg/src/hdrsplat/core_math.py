"""Geometric primitives: quaternions, 3D covariances, cameras, EWA projection.

All functions are pure and operate on float64. Scalar (single-Gaussian)
variants define the reference semantics; the vectorized ``*_batch`` variants
are what the render pipeline calls and are cross-checked against the scalar
ones in the test suite. Manual reverse-mode companions (``*_backward``) return
exact gradients of their forward counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Engine defaults (the underlying splatting papers are silent on both).
DEFAULT_LOWPASS = 0.3  # px^2 added to the 2D covariance diagonal
DEFAULT_NEAR = 0.01  # near-plane cull distance, world units


def quaternion_normalize(q: np.ndarray) -> np.ndarray:
    """Return q / |q|. Raises on (near-)zero norm."""
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError("quaternion has zero or non-finite norm")
    return q / n


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion; normalizes internally."""
    w, x, y, z = quaternion_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternions_to_rotations(q: np.ndarray) -> np.ndarray:
    """Batch (N, 4) -> (N, 3, 3); normalizes each row internally."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=1)
    if not np.all(np.isfinite(n)) or np.any(n < 1e-12):
        raise ValueError("quaternion batch contains zero or non-finite norms")
    w, x, y, z = (q / n[:, None]).T
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotation_backward(q: np.ndarray, grad_R: np.ndarray) -> np.ndarray:
    """Gradients of quaternions_to_rotations: (N, 4), (N, 3, 3) -> (N, 4).

    Chains through the internal normalization, so the returned gradient is
    with respect to the raw (unnormalized) quaternion.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=1)
    qn = q / n[:, None]
    w, x, y, z = qn.T
    G = grad_R
    zeros = np.zeros_like(w)

    # dR/dw, dR/dx, dR/dy, dR/dz per the unit-quaternion rotation formula
    def stack(rows):
        return 2.0 * np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    dRdw = stack([[zeros, -z, y], [z, zeros, -x], [-y, x, zeros]])
    dRdx = stack([[zeros, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dRdy = stack([[-2 * y, x, w], [x, zeros, z], [-w, z, -2 * y]])
    dRdz = stack([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zeros]])

    grad_qn = np.stack(
        [
            np.einsum("nij,nij->n", G, dRdw),
            np.einsum("nij,nij->n", G, dRdx),
            np.einsum("nij,nij->n", G, dRdy),
            np.einsum("nij,nij->n", G, dRdz),
        ],
        axis=1,
    )
    # qn = q / |q|  =>  d qn / d q = (I - qn qn^T) / |q|
    inner = np.einsum("ni,ni->n", grad_qn, qn)
    return (grad_qn - inner[:, None] * qn) / n[:, None]


def covariance_from_rs(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """World covariance R diag(s)^2 R^T of one Gaussian."""
    R = quaternion_to_rotation(q)
    RS = R * np.asarray(s, dtype=np.float64)[None, :]
    return RS @ RS.T


def covariances_from_rs(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Batch (N, 4), (N, 3) -> (N, 3, 3)."""
    R = quaternions_to_rotations(q)
    RS = R * np.asarray(s, dtype=np.float64)[:, None, :]
    return np.einsum("nik,njk->nij", RS, RS)


def covariances_from_rs_backward(
    q: np.ndarray, s: np.ndarray, grad_cov: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of covariances_from_rs w.r.t. raw quaternion and scale."""
    s = np.asarray(s, dtype=np.float64)
    R = quaternions_to_rotations(q)
    D = s * s  # diag entries of S S^T
    G = grad_cov
    Gsym = G + np.transpose(G, (0, 2, 1))
    # Sigma = R D R^T with D diagonal: dL/dR = (G + G^T) R D, dL/dD = diag(R^T G R)
    grad_R = np.einsum("nij,njk->nik", Gsym, R) * D[:, None, :]
    RtGR_diag = np.einsum("nji,njk,nki->ni", R, G, R)
    grad_s = 2.0 * s * RtGR_diag
    grad_q = rotation_backward(q, grad_R)
    return grad_q, grad_s


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform.

    Pixel coordinates are continuous with pixel (ix, iy) sampled at the
    integer point (ix, iy); the principal point (cx, cy) lives in the same
    frame. Camera +z looks forward; points with z <= near are culled.
    """

    world_to_camera: np.ndarray  # (3, 3) rotation, rows orthonormal
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.width < 1 or self.height < 1:
            raise ValueError("camera image size must be at least 1x1")
        RtR = self.world_to_camera.T @ self.world_to_camera
        if not np.allclose(RtR, np.eye(3), atol=1e-6):
            raise ValueError("world_to_camera rotation is not orthonormal")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """(N, 3) world points -> (N, 3) camera-frame points."""
        return points @ self.world_to_camera.T + self.translation


def look_at_camera(
    position, target, fx: float, fy: float, width: int, height: int, up=(0.0, 0.0, 1.0)
) -> Camera:
    """Camera at ``position`` looking at ``target`` (x right, y down, z forward)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    fn = np.linalg.norm(forward)
    if fn < 1e-12:
        raise ValueError("camera position coincides with the look-at target")
    z = forward / fn
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    xn = np.linalg.norm(x)
    if xn < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
        xn = np.linalg.norm(x)
    x = x / xn
    y = np.cross(z, x)
    W = np.stack([x, y, z])
    return Camera(
        world_to_camera=W,
        translation=-W @ position,
        fx=fx,
        fy=fy,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
    )


@dataclass
class Splat2D:
    """A 3D Gaussian projected to the image plane."""

    mean2d: np.ndarray  # (2,) pixels
    cov2d: np.ndarray  # (2, 2) pixels^2, includes low-pass dilation
    depth: float  # camera-frame z, world units
    gaussian_index: int


def perspective_jacobian(t: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """First-order EWA Jacobian of (u, v) = (fx x/z + cx, fy y/z + cy) at t."""
    x, y, z = t
    return np.array(
        [[fx / z, 0.0, -fx * x / (z * z)], [0.0, fy / z, -fy * y / (z * z)]]
    )


def project_gaussian(
    mu: np.ndarray,
    cov: np.ndarray,
    cam: Camera,
    lowpass: float = DEFAULT_LOWPASS,
    near: float = DEFAULT_NEAR,
    gaussian_index: int = 0,
) -> Splat2D | None:
    """Project one Gaussian; returns None when culled by the near plane."""
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
        raise ValueError("non-finite projection inputs")
    if lowpass < 0:
        raise ValueError("lowpass must be >= 0")
    t = cam.world_to_camera @ mu + cam.translation
    if t[2] <= near:
        return None
    mean2d = np.array(
        [cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy]
    )
    J = perspective_jacobian(t, cam.fx, cam.fy)
    M = J @ cam.world_to_camera
    cov2d = M @ cov @ M.T + lowpass * np.eye(2)
    return Splat2D(mean2d=mean2d, cov2d=cov2d, depth=float(t[2]), gaussian_index=gaussian_index)


def project_cloud(
    mu: np.ndarray,
    cov: np.ndarray,
    cam: Camera,
    lowpass: float = DEFAULT_LOWPASS,
    near: float = DEFAULT_NEAR,
):
    """Vectorized projection of (N, 3) means and (N, 3, 3) covariances.

    Returns (mean2d (N,2), cov2d (N,2,2), depth (N,), visible mask (N,)).
    Culled entries hold garbage and must be masked by the caller.
    """
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
        raise ValueError("non-finite projection inputs")
    t = mu @ cam.world_to_camera.T + cam.translation
    z = t[:, 2]
    visible = z > near
    zs = np.where(visible, z, 1.0)  # avoid divide-by-zero on culled rows
    mean2d = np.stack(
        [cam.fx * t[:, 0] / zs + cam.cx, cam.fy * t[:, 1] / zs + cam.cy], axis=1
    )
    J = np.zeros((mu.shape[0], 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * t[:, 0] / (zs * zs)
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * t[:, 1] / (zs * zs)
    M = np.einsum("nij,jk->nik", J, cam.world_to_camera)
    cov2d = np.einsum("nij,njk,nlk->nil", M, cov, M)
    cov2d[:, 0, 0] += lowpass
    cov2d[:, 1, 1] += lowpass
    return mean2d, cov2d, z, visible


def project_cloud_backward(
    mu: np.ndarray,
    cov: np.ndarray,
    cam: Camera,
    visible: np.ndarray,
    grad_mean2d: np.ndarray,
    grad_cov2d: np.ndarray,
    grad_depth: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of project_cloud w.r.t. world mean and world covariance.

    Culled rows receive zero gradient. The low-pass dilation is additive, so
    grad_cov2d passes through to M cov M^T unchanged.
    """
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    W = cam.world_to_camera
    t = mu @ W.T + cam.translation
    x, y = t[:, 0], t[:, 1]
    z = np.where(visible, t[:, 2], 1.0)

    J = np.zeros((mu.shape[0], 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / (z * z)
    M = np.einsum("nij,jk->nik", J, W)

    G = grad_cov2d
    Gsym = G + np.transpose(G, (0, 2, 1))
    # cov2d = M cov M^T: dL/dcov = M^T G M, dL/dM = (G + G^T) M cov
    grad_cov = np.einsum("nji,njk,nkl->nil", M, G, M)
    grad_M = np.einsum("nij,njk,nkl->nil", Gsym, M, cov)
    grad_J = np.einsum("nij,kj->nik", grad_M, W)

    # mean2d rows are exactly J rows, so grad via mean2d is J^T g
    grad_t = np.einsum("nji,nj->ni", J, grad_mean2d)
    if grad_depth is not None:
        grad_t[:, 2] += grad_depth

    # J entries depend on t: chain the four nonzero partials
    z2 = z * z
    z3 = z2 * z
    grad_t[:, 0] += grad_J[:, 0, 2] * (-cam.fx / z2)
    grad_t[:, 1] += grad_J[:, 1, 2] * (-cam.fy / z2)
    grad_t[:, 2] += (
        grad_J[:, 0, 0] * (-cam.fx / z2)
        + grad_J[:, 1, 1] * (-cam.fy / z2)
        + grad_J[:, 0, 2] * (2.0 * cam.fx * x / z3)
        + grad_J[:, 1, 2] * (2.0 * cam.fy * y / z3)
    )

    grad_mu = grad_t @ W
    mask = visible[:, None]
    return np.where(mask, grad_mu, 0.0), np.where(mask[:, :, None], grad_cov, 0.0)
