"""SE(3) exponential / logarithm and the pose / flow supervision losses.

Twists are ordered ``(rho, omega)``: translational part first, rotation
vector (radians) second, so ``se3_exp([1, 2, 3, 0, 0, 0])`` is a pure
translation by (1, 2, 3).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from fourierslam.errors import DataError, ShapeError

SMALL_ANGLE = 1e-6
_NEAR_PI = 1e-4
_ORTHO_TOL = 1e-9


def hat(w):
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ShapeError(f"pose needs a 3x3 rotation and 3-vector, got {r.shape}, {t.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(r) - 1) > _ORTHO_TOL:
            raise DataError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __matmul__(self, other):
        if isinstance(other, Pose):
            return Pose(
                self.rotation @ other.rotation,
                self.rotation @ other.translation + self.translation,
            )
        return np.asarray(other) @ self.rotation.T + self.translation

    def with_translation(self, t):
        return Pose(self.rotation, np.asarray(t, dtype=float))


def _so3_coeffs(theta):
    """A = sin/theta, B = (1-cos)/theta^2, C = (theta-sin)/theta^3."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - c) / theta**2, (theta - s) / theta**3


def so3_exp(omega):
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    a, b, _ = _so3_coeffs(theta)
    k = hat(omega)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r):
    """Rotation vector on the principal branch, |theta| <= pi."""
    r = np.asarray(r, dtype=float)
    cos_t = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    skew = vee(r - r.T)  # = 2 sin(theta) * axis
    sin_t = 0.5 * float(np.linalg.norm(skew))
    # atan2 stays well conditioned near 0 and pi, where arccos / arcsin do not
    theta = float(np.arctan2(sin_t, cos_t))
    if theta < SMALL_ANGLE:
        return 0.5 * skew
    if np.pi - theta < _NEAR_PI:
        # sin(theta) ~ 0: recover the axis from the symmetric part instead
        sym = (r + r.T - 2.0 * cos_t * np.eye(3)) / (2.0 * (1.0 - cos_t))
        col = int(np.argmax(np.diag(sym)))
        axis = sym[:, col] / np.sqrt(max(sym[col, col], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ skew < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * sin_t) * skew


def se3_exp(xi):
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (6,):
        raise ShapeError(f"twist must have 6 entries, got {xi.shape}")
    rho, omega = xi[:3], xi[3:]
    theta = float(np.linalg.norm(omega))
    a, b, c = _so3_coeffs(theta)
    k = hat(omega)
    k2 = k @ k
    r = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Pose(r, v @ rho)


def se3_log(pose):
    omega = so3_log(pose.rotation)
    theta = float(np.linalg.norm(omega))
    k = hat(omega)
    k2 = k @ k
    if theta < SMALL_ANGLE:
        v_inv = np.eye(3) - 0.5 * k + k2 / 12.0
    else:
        a, b, _ = _so3_coeffs(theta)
        v_inv = np.eye(3) - 0.5 * k + (1.0 - a / (2.0 * b)) / theta**2 * k2
    return np.concatenate([v_inv @ pose.translation, omega])


def rotation_angle(r):
    """Angle of a rotation matrix via the trace, clamped for arccos."""
    return float(np.arccos(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)))


def quat_to_rot(q):
    """(qx, qy, qz, qw) unit quaternion -> rotation matrix."""
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(r):
    """Rotation matrix -> (qx, qy, qz, qw) with qw >= 0 (Shepperd's method)."""
    m = np.asarray(r, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[3] < 0 else q


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.9
    iterations: Optional[int] = None  # if set, must equal the number of iterates passed
    rot_weight: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("iteration count must be >= 1")
        if self.rot_weight < 0:
            raise ValueError("rotation weight must be >= 0")


def _iterate_weights(m, cfg):
    if m < 1:
        raise DataError("need at least one iterate")
    if cfg.iterations is not None and cfg.iterations != m:
        raise DataError(f"config expects {cfg.iterations} iterates, got {m}")
    # iterate k (1-based) is weighted gamma^(M-k): the last one carries weight 1
    return cfg.gamma ** np.arange(m - 1, -1, -1, dtype=float)


def twist_norm(xi, rot_weight=1.0):
    xi = np.asarray(xi, dtype=float)
    return float(np.sqrt(xi[:3] @ xi[:3] + rot_weight**2 * (xi[3:] @ xi[3:])))


def pose_loss(iterates, gt, cfg=None):
    """sum_k gamma^(M-k) sum_i ||log(T_i^-1 G_i)|| over iterates k = 1..M."""
    cfg = cfg or LossConfig()
    iterates = [list(it) for it in iterates]
    gt = list(gt)
    weights = _iterate_weights(len(iterates), cfg)
    total = 0.0
    for wk, poses in zip(weights, iterates):
        if len(poses) != len(gt):
            raise DataError(f"iterate has {len(poses)} poses, ground truth has {len(gt)}")
        err = sum(twist_norm(se3_log(t.inverse() @ g), cfg.rot_weight) for t, g in zip(poses, gt))
        total += wk * err
    return float(total)


def flow_loss(iterates, gt, cfg=None):
    """sum_k gamma^(M-k) * mean per-pixel endpoint error of flow iterate k."""
    cfg = cfg or LossConfig()
    gt = np.asarray(gt, dtype=float)
    if gt.ndim != 3 or gt.shape[-1] != 2:
        raise ShapeError(f"flow field must be H x W x 2, got {gt.shape}")
    weights = _iterate_weights(len(iterates), cfg)
    total = 0.0
    for wk, flow in zip(weights, iterates):
        flow = np.asarray(flow, dtype=float)
        if flow.shape != gt.shape:
            raise ShapeError(f"flow iterate {flow.shape} does not match ground truth {gt.shape}")
        total += wk * float(np.mean(np.linalg.norm(flow - gt, axis=-1)))
    return float(total)


def total_loss(l_distill, l_pose, l_flow):
    for name, v in (("distillation", l_distill), ("pose", l_pose), ("flow", l_flow)):
        if v < 0:
            raise DataError(f"{name} loss must be non-negative, got {v}")
    return float(l_distill + l_pose + l_flow)
