"""Trajectories, TUM text I/O, association, alignment and evaluation metrics."""

import csv
import io
from dataclasses import asdict, dataclass
from typing import ClassVar, Optional

import numpy as np

from fourierslam.errors import DataError, DegenerateError, ShapeError
from fourierslam.geometry import Pose, quat_to_rot, rot_to_quat, rotation_angle

QUAT_NORM_TOL = 1e-3


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped poses stored as arrays: (N,), (N, 3, 3), (N, 3)."""

    timestamps: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).reshape(-1)
        r = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        p = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        if not (len(t) == len(r) == len(p)):
            raise DataError("trajectory arrays differ in length")
        if np.any(np.diff(t) <= 0):
            raise DataError("trajectory timestamps must be strictly ascending")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "rotations", r)
        object.__setattr__(self, "translations", p)

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_poses(cls, timestamps, poses):
        poses = list(poses)
        return cls(
            np.asarray(timestamps, dtype=float),
            np.array([p.rotation for p in poses]).reshape(-1, 3, 3),
            np.array([p.translation for p in poses]).reshape(-1, 3),
        )

    def pose(self, i):
        return Pose(self.rotations[i], self.translations[i])

    @property
    def poses(self):
        return [self.pose(i) for i in range(len(self))]

    def transformed(self, pose, scale=1.0):
        """Apply x -> scale * R x + t to every pose (left multiplication)."""
        rot = np.einsum("ij,njk->nik", pose.rotation, self.rotations)
        trans = scale * self.translations @ pose.rotation.T + pose.translation
        return Trajectory(self.timestamps, rot, trans)


def parse_tum(text, source="<string>"):
    stamps, rots, trans = [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        if len(fields) != 8:
            raise DataError(f"{source}:{lineno}: expected 8 fields 't tx ty tz qx qy qz qw', got {len(fields)}")
        try:
            vals = [float(f) for f in fields]
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if not np.all(np.isfinite(vals)):
            raise DataError(f"{source}:{lineno}: non-finite value")
        q = np.array(vals[4:])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise DataError(f"{source}:{lineno}: quaternion norm {norm:.6f} is not 1")
        if stamps and vals[0] <= stamps[-1]:
            raise DataError(f"{source}:{lineno}: timestamp {vals[0]} is not ascending")
        stamps.append(vals[0])
        trans.append(vals[1:4])
        rots.append(quat_to_rot(q / norm))
    return Trajectory(np.array(stamps), np.array(rots).reshape(-1, 3, 3), np.array(trans).reshape(-1, 3))


def load_tum(path):
    with open(path) as fh:
        return parse_tum(fh.read(), source=str(path))


def format_tum(traj):
    out = io.StringIO()
    for t, r, p in zip(traj.timestamps, traj.rotations, traj.translations):
        q = rot_to_quat(r)
        vals = " ".join(f"{v:.12g}" for v in (*p, *q))
        out.write(f"{t:.9f} {vals}\n")
    return out.getvalue()


def save_tum(traj, path):
    with open(path, "w") as fh:
        fh.write(format_tum(traj))


def associate(a, b, max_dt=0.02):
    """Greedy nearest-timestamp matching; returns sorted (i, j) index pairs.

    Candidate pairs within ``max_dt`` are accepted in order of increasing
    |dt| (ties by index), each sample used at most once.
    """
    if not max_dt > 0:
        raise ValueError("max_dt must be positive")
    ta = np.asarray(a.timestamps if hasattr(a, "timestamps") else a, dtype=float)
    tb = np.asarray(b.timestamps if hasattr(b, "timestamps") else b, dtype=float)
    cands = []
    lo = np.searchsorted(tb, ta - max_dt, side="left")
    hi = np.searchsorted(tb, ta + max_dt, side="right")
    for i in range(len(ta)):
        for j in range(lo[i], hi[i]):
            dt = abs(ta[i] - tb[j])
            if dt <= max_dt:
                cands.append((dt, i, j))
    cands.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in cands:
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)
            pairs.append((i, j))
    return sorted(pairs)


def umeyama_align(est, gt, with_scale=False):
    """Least-squares (s, R, t) minimizing sum ||gt - (s R est + t)||^2.

    Returns ``(Pose(R, t), s)``; s is 1 unless ``with_scale``.
    """
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape or est.ndim != 2 or est.shape[1] != 3:
        raise ShapeError(f"alignment needs matching N x 3 point sets, got {est.shape}, {gt.shape}")
    n = len(est)
    if n < 3:
        raise DegenerateError(f"alignment needs at least 3 point pairs, got {n}")
    mu_e, mu_g = est.mean(axis=0), gt.mean(axis=0)
    ec, gc = est - mu_e, gt - mu_g
    sv_e = np.linalg.svd(ec, compute_uv=False)
    if sv_e[1] <= 1e-9 * max(sv_e[0], 1e-300):
        raise DegenerateError("point configuration is collinear or degenerate (rank < 2)")
    cov = gc.T @ ec / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2, 2] = -1.0
    rot = u @ sign @ vt
    scale = 1.0
    if with_scale:
        var_e = np.sum(ec * ec) / n
        scale = float(np.trace(np.diag(d) @ sign) / var_e)
    trans = mu_g - scale * rot @ mu_e
    return Pose(rot, trans), scale


def ate_rmse(est, gt, align=True, max_dt=0.02, with_scale=False):
    """Absolute trajectory error (RMSE of translation residuals) in centimetres."""
    pairs = associate(est, gt, max_dt)
    if len(pairs) < 3:
        raise DataError(f"ATE needs at least 3 associated pairs, found {len(pairs)}")
    ie, ig = map(list, zip(*pairs))
    pe = est.translations[ie]
    pg = gt.translations[ig]
    sq = np.sum((pg - pe) ** 2)
    if align:
        pose, scale = umeyama_align(pe, pg, with_scale)
        res = pg - (scale * pe @ pose.rotation.T + pose.translation)
        # the identity is also a candidate transform; SVD round-off can only lose to it
        sq = min(sq, np.sum(res * res))
    return float(np.sqrt(sq / len(pe)) * 100.0)


def flow_metrics(est, gt, threshold=1.0):
    """(percentage of pixels with endpoint error <= threshold, mean endpoint error)."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape or est.ndim != 3 or est.shape[-1] != 2:
        raise ShapeError(f"flow fields must be matching H x W x 2, got {est.shape}, {gt.shape}")
    epe = np.linalg.norm(est - gt, axis=-1)
    return float(np.mean(epe <= threshold) * 100.0), float(np.mean(epe))


def pose_metrics(est, gt, rot_thresh_deg=0.1, tra_thresh=0.01):
    """Percentages of poses with rotation error <= rot_thresh_deg and translation error <= tra_thresh."""
    est, gt = list(est), list(gt)
    if len(est) != len(gt):
        raise DataError(f"pose sets differ in size: {len(est)} vs {len(gt)}")
    if not est:
        raise DataError("pose sets are empty")
    rot_err = np.array([np.degrees(rotation_angle(e.rotation.T @ g.rotation)) for e, g in zip(est, gt)])
    tra_err = np.array([np.linalg.norm(e.translation - g.translation) for e, g in zip(est, gt)])
    return float(np.mean(rot_err <= rot_thresh_deg) * 100.0), float(np.mean(tra_err <= tra_thresh) * 100.0)


def accumulation_error(traj, loop_length, reference=None):
    """Loop-closure drift: (metres, percentage of loop_length).

    Without ``reference`` this is the gap between the first and last
    positions of a nominally closed loop. With a reference trajectory
    (for instance GNSS-RTK) it is the gap between the two trajectories'
    final positions.
    """
    if len(traj) < (1 if reference is not None else 2):
        raise DataError("trajectory too short for an accumulation error")
    if not loop_length > 0:
        raise ValueError("loop length must be positive")
    end = traj.translations[-1]
    if reference is None:
        err = float(np.linalg.norm(end - traj.translations[0]))
    else:
        ref = reference.translations if hasattr(reference, "translations") else reference.positions
        err = float(np.linalg.norm(end - ref[-1]))
    return err, err / loop_length * 100.0


def path_length(traj):
    return float(np.sum(np.linalg.norm(np.diff(traj.translations, axis=0), axis=1)))


@dataclass
class MetricReport:
    ate_rmse: Optional[float] = None  # cm
    acc_1px: Optional[float] = None  # %
    aepe: Optional[float] = None  # pixels
    rot_within: Optional[float] = None  # %
    tra_within: Optional[float] = None  # %
    accumulation_error: Optional[float] = None  # m
    proportion: Optional[float] = None  # %

    _UNITS: ClassVar[dict] = {
        "ate_rmse": "cm",
        "acc_1px": "%",
        "aepe": "px",
        "rot_within": "%",
        "tra_within": "%",
        "accumulation_error": "m",
        "proportion": "%",
    }

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v is None:
                continue
            if v < 0:
                raise DataError(f"{k} must be non-negative, got {v}")
            if self._UNITS[k] == "%" and v > 100:
                raise DataError(f"{k} is a percentage, got {v}")

    def to_csv(self):
        present = {k: v for k, v in asdict(self).items() if v is not None}
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(present.keys())
        writer.writerow(f"{v:.6f}" for v in present.values())
        return out.getvalue()

    def to_text(self):
        lines = []
        for k, v in asdict(self).items():
            if v is not None:
                lines.append(f"{k:>20}: {v:.4f} {self._UNITS[k]}")
        return "\n".join(lines) + "\n"
