"""Camera extrinsics via the continuous 6D rotation encoding, pinhole
projection, the camera-space alignment loss, and direct pose fitting.

Conventions: the rotation matrix has rows (Rx, Ry, Rz) built as
Rx = N(bx), Rz = N(Rx x by), Ry = Rz x Rx, and acts on column vectors as
R @ p. The camera looks down +z in camera space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    CorrespondenceMismatch,
    DegenerateCloud,
    DegenerateRotation,
    InvalidRotation,
    ParseError,
    ValidationError,
)

_MIN_DEPTH = 1e-9
_DEGENERACY_EPS = 1e-9


@dataclass(frozen=True)
class Rotation6D:
    """Two free 3-vectors; the first two rows of a rotation before
    orthonormalization."""

    bx: np.ndarray
    by: np.ndarray

    def __post_init__(self):
        bx = np.asarray(self.bx, dtype=np.float64).reshape(3)
        by = np.asarray(self.by, dtype=np.float64).reshape(3)
        object.__setattr__(self, "bx", bx)
        object.__setattr__(self, "by", by)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.bx, self.by])


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera transform p_cam = R @ p_world + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise InvalidRotation("R is not orthonormal within 1e-6")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise InvalidRotation("det(R) != +1 within 1e-6")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def camera_center(self) -> np.ndarray:
        """World position of the camera origin."""
        return -self.R.T @ self.t


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixel units; origin at the top-left texel center."""

    focal: float = 128.0
    cx: float = 63.5
    cy: float = 63.5
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if self.focal <= 0:
            raise ValidationError(f"focal must be positive, got {self.focal}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValidationError("principal point outside the image")

    @staticmethod
    def default_for(width: int, height: int) -> "Intrinsics":
        return Intrinsics(
            focal=float(width),
            cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0,
            width=width,
            height=height,
        )


def rotation_from_6d(b: Rotation6D) -> np.ndarray:
    """Orthonormal rotation with rows Rx = N(bx), Rz = N(Rx x by), Ry = Rz x Rx."""
    nx = np.linalg.norm(b.bx)
    if nx <= _DEGENERACY_EPS or np.linalg.norm(np.cross(b.bx, b.by)) <= _DEGENERACY_EPS:
        raise DegenerateRotation("bx and by must be non-zero and non-parallel")
    rx = b.bx / nx
    u = np.cross(rx, b.by)
    rz = u / np.linalg.norm(u)
    ry = np.cross(rz, rx)
    return np.stack([rx, ry, rz])


def six_d_from_rotation(R: np.ndarray) -> Rotation6D:
    """Inverse map: the first two rows of an orthonormal rotation."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if np.abs(R @ R.T - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
        raise InvalidRotation("input is not a rotation matrix")
    return Rotation6D(bx=R[0].copy(), by=R[1].copy())


def pose_from_6d(b: Rotation6D, t) -> CameraPose:
    return CameraPose(R=rotation_from_6d(b), t=np.asarray(t, dtype=np.float64))


def transform_world_to_camera(pose: CameraPose, p) -> np.ndarray:
    """R @ p + t for a single point or an (N, 3) batch."""
    p = np.asarray(p, dtype=np.float64)
    return p @ pose.R.T + pose.t


def project_point(intr: Intrinsics, p_cam) -> np.ndarray:
    """Pinhole projection of camera-space points with positive depth."""
    p = np.asarray(p_cam, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    z = p[:, 2]
    if (z <= _MIN_DEPTH).any():
        raise BehindCamera("point has non-positive camera depth")
    q = np.stack(
        [intr.focal * p[:, 0] / z + intr.cx, intr.focal * p[:, 1] / z + intr.cy],
        axis=1,
    )
    return q[0] if single else q


def project_world_point(pose: CameraPose, intr: Intrinsics, p_world) -> np.ndarray:
    return project_point(intr, transform_world_to_camera(pose, p_world))


def _check_correspondence(pc_w, pc_g):
    pc_w = np.atleast_2d(np.asarray(pc_w, dtype=np.float64))
    pc_g = np.atleast_2d(np.asarray(pc_g, dtype=np.float64))
    if len(pc_w) != len(pc_g):
        raise CorrespondenceMismatch(f"cloud sizes differ: {len(pc_w)} vs {len(pc_g)}")
    if len(pc_w) < 1:
        raise CorrespondenceMismatch("clouds are empty")
    return pc_w, pc_g


def camera_loss(b: Rotation6D, t, pc_w, pc_g) -> float:
    """Mean squared camera-space alignment error of index-matched clouds."""
    pc_w, pc_g = _check_correspondence(pc_w, pc_g)
    R = rotation_from_6d(b)
    residual = pc_g - (pc_w @ R.T + np.asarray(t, dtype=np.float64))
    return float((residual**2).sum(axis=1).mean())


def camera_loss_and_gradients(b: Rotation6D, t, pc_w, pc_g):
    """Loss plus analytic gradients with respect to bx, by and t.

    The rotation construction is differentiated by hand: normalization maps
    get the projection Jacobian (I - r r^T)/|v|, cross products turn into
    cross products against the upstream gradient.
    """
    pc_w, pc_g = _check_correspondence(pc_w, pc_g)
    t = np.asarray(t, dtype=np.float64)
    n = len(pc_w)

    nx = np.linalg.norm(b.bx)
    if nx <= _DEGENERACY_EPS or np.linalg.norm(np.cross(b.bx, b.by)) <= _DEGENERACY_EPS:
        raise DegenerateRotation("bx and by must be non-zero and non-parallel")
    rx = b.bx / nx
    u = np.cross(rx, b.by)
    nu = np.linalg.norm(u)
    rz = u / nu
    ry = np.cross(rz, rx)
    R = np.stack([rx, ry, rz])

    residual = (pc_w @ R.T + t) - pc_g
    loss = float((residual**2).sum(axis=1).mean())

    grad_t = 2.0 / n * residual.sum(axis=0)
    G = 2.0 / n * residual.T @ pc_w  # dL/dR, rows gx, gy, gz
    gx, gy, gz = G

    grad_rz = gz + np.cross(rx, gy)
    grad_u = (grad_rz - rz * (rz @ grad_rz)) / nu
    grad_by = np.cross(grad_u, rx)
    grad_rx = gx + np.cross(gy, rz) + np.cross(b.by, grad_u)
    grad_bx = (grad_rx - rx * (rx @ grad_rx)) / nx
    return loss, grad_bx, grad_by, grad_t


@dataclass
class PoseFitSettings:
    """First-order optimizer settings for direct pose fitting.

    The learning rate decays exponentially from learning_rate to final_lr
    over the step budget so the iterates settle instead of oscillating.
    """

    learning_rate: float = 1e-2
    final_lr: float = 1e-5
    steps: int = 2000
    restarts: int = 20
    tolerance: float = 1e-12
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _batched_loss_grads(theta, pc_w, pc_g):
    """camera_loss and its gradient for (B, 9) parameter rows at once."""
    bx, by, t = theta[:, 0:3], theta[:, 3:6], theta[:, 6:9]
    n = len(pc_w)
    nx = np.linalg.norm(bx, axis=1, keepdims=True)
    rx = bx / nx
    u = np.cross(rx, by)
    nu = np.linalg.norm(u, axis=1, keepdims=True)
    rz = u / nu
    ry = np.cross(rz, rx)
    R = np.stack([rx, ry, rz], axis=1)  # (B, 3, 3) rows

    pred = np.einsum("brc,nc->bnr", R, pc_w) + t[:, None, :]
    residual = pred - pc_g[None, :, :]
    loss = (residual**2).sum(axis=2).mean(axis=1)

    grad_t = 2.0 / n * residual.sum(axis=1)
    G = 2.0 / n * np.einsum("bnr,nc->brc", residual, pc_w)
    gx, gy, gz = G[:, 0], G[:, 1], G[:, 2]

    grad_rz = gz + np.cross(rx, gy)
    grad_u = (grad_rz - rz * (rz * grad_rz).sum(axis=1, keepdims=True)) / nu
    grad_by = np.cross(grad_u, rx)
    grad_rx = gx + np.cross(gy, rz) + np.cross(by, grad_u)
    grad_bx = (grad_rx - rx * (rx * grad_rx).sum(axis=1, keepdims=True)) / nx
    return loss, np.concatenate([grad_bx, grad_by, grad_t], axis=1)


def fit_pose(pc_w, pc_g, seed: int = 0, opts: PoseFitSettings | None = None):
    """Recover the pose aligning pc_w onto pc_g by minimizing camera_loss.

    Runs Adam from `restarts` seeded random initializations advancing in
    lockstep (the vectorized equivalent of concurrent restarts) and keeps the
    lowest loss, ties broken by restart index. Stops early once the best loss
    reaches the tolerance. Returns the pose and the best-so-far loss history,
    which is monotone non-increasing.
    """
    opts = opts or PoseFitSettings()
    pc_w, pc_g = _check_correspondence(pc_w, pc_g)
    if len(pc_w) < 3:
        raise DegenerateCloud(f"need >= 3 correspondences, got {len(pc_w)}")
    centered = pc_w - pc_w.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateCloud("correspondences are collinear")

    rng = np.random.default_rng(seed)
    nrestarts = opts.restarts
    b_init = rng.standard_normal((nrestarts, 6))
    degenerate = (
        np.linalg.norm(np.cross(b_init[:, 0:3], b_init[:, 3:6]), axis=1)
        <= _DEGENERACY_EPS
    )
    while degenerate.any():
        b_init[degenerate] = rng.standard_normal((int(degenerate.sum()), 6))
        degenerate = (
            np.linalg.norm(np.cross(b_init[:, 0:3], b_init[:, 3:6]), axis=1)
            <= _DEGENERACY_EPS
        )
    # Translation init: align centroids under each initial rotation.
    theta = np.zeros((nrestarts, 9))
    theta[:, 0:6] = b_init
    for i in range(nrestarts):
        R0 = rotation_from_6d(Rotation6D(b_init[i, 0:3], b_init[i, 3:6]))
        theta[i, 6:9] = pc_g.mean(axis=0) - R0 @ pc_w.mean(axis=0)

    decay = (opts.final_lr / opts.learning_rate) ** (1.0 / max(opts.steps - 1, 1))
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    lr = opts.learning_rate

    best_loss = np.inf
    best_theta = theta[0].copy()
    history: list[float] = []
    for step in range(opts.steps):
        loss, grad = _batched_loss_grads(theta, pc_w, pc_g)
        i = int(loss.argmin())
        if loss[i] < best_loss:
            best_loss = float(loss[i])
            best_theta = theta[i].copy()
        history.append(best_loss)
        if best_loss <= opts.tolerance:
            break
        m = opts.beta1 * m + (1 - opts.beta1) * grad
        v = opts.beta2 * v + (1 - opts.beta2) * grad * grad
        mhat = m / (1 - opts.beta1 ** (step + 1))
        vhat = v / (1 - opts.beta2 ** (step + 1))
        theta = theta - lr * mhat / (np.sqrt(vhat) + opts.eps)
        lr *= decay
    else:
        # Score the final iterates as well.
        loss, _ = _batched_loss_grads(theta, pc_w, pc_g)
        i = int(loss.argmin())
        if loss[i] < best_loss:
            best_loss = float(loss[i])
            best_theta = theta[i].copy()
        history.append(best_loss)

    pose = pose_from_6d(
        Rotation6D(best_theta[0:3], best_theta[3:6]), best_theta[6:9]
    )
    return pose, history


def pose_metrics(pred: CameraPose, gt: CameraPose, pc_w, intr: Intrinsics):
    """(d3D, d2D): mean camera-space distance and mean reprojection error."""
    pc_w = np.atleast_2d(np.asarray(pc_w, dtype=np.float64))
    p_pred = transform_world_to_camera(pred, pc_w)
    p_gt = transform_world_to_camera(gt, pc_w)
    d3d = float(np.linalg.norm(p_pred - p_gt, axis=1).mean())
    q_pred = project_point(intr, p_pred)
    q_gt = project_point(intr, p_gt)
    d2d = float(np.linalg.norm(q_pred - q_gt, axis=1).mean())
    return d3d, d2d


def look_at_pose(camera_position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Pose of a camera at camera_position looking toward target (+z forward)."""
    c = np.asarray(camera_position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - c
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return CameraPose(R=R, t=-R @ c)


def save_pose(path, pose: CameraPose) -> None:
    """One line `bx1 bx2 bx3 by1 by2 by3 t1 t2 t3`, full-precision text."""
    b = six_d_from_rotation(pose.R)
    values = list(b.bx) + list(b.by) + list(pose.t)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(repr(float(v)) for v in values) + "\n")


def load_pose(path) -> CameraPose:
    with open(path, "r", encoding="utf-8") as fh:
        parts = fh.read().split()
    if len(parts) != 9:
        raise ParseError(f"pose file needs 9 numbers, found {len(parts)}", path, 1)
    try:
        vals = np.array([float(x) for x in parts])
    except ValueError as exc:
        raise ParseError(str(exc), path, 1)
    return pose_from_6d(Rotation6D(vals[0:3], vals[3:6]), vals[6:9])
