"""Position-only EKF fusing visual SLAM and GNSS-RTK positions.

Naming follows the fusion write-up this module implements, which swaps
the usual convention: ``Q`` is the *measurement* noise (6 x 6, visual
block first, then GNSS) and ``R`` the *process* noise (3 x 3).

State x is a 3D position; the motion model is x + u with F = I, and both
sensors observe the position directly, so h(x) = [x; x], H = [I3; I3].
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fourierslam.errors import DataError, NumericalError
from fourierslam.trajectory import Trajectory

MAX_CONDITION = 1e12

H_STACKED = np.vstack([np.eye(3), np.eye(3)])
H_VISUAL = np.eye(3)


@dataclass(frozen=True)
class EkfState:
    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.P, dtype=float)
        if x.shape != (3,) or p.shape != (3, 3):
            raise DataError(f"EKF state needs x in R^3 and 3x3 P, got {x.shape}, {p.shape}")
        if np.max(np.abs(p - p.T)) > 1e-9:
            raise DataError("state covariance is not symmetric")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", p)


def _check_sym(m, name, strict_pd):
    m = np.asarray(m, dtype=float)
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(m))):
        raise DataError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(m)
    if strict_pd and eig.min() <= 0:
        raise DataError(f"{name} must be positive definite")
    if not strict_pd and eig.min() < -1e-12 * max(1.0, eig.max()):
        raise DataError(f"{name} must be positive semidefinite")
    return m


def default_measurement_noise():
    return np.diag([0.01] * 3 + [0.0004] * 3)


def default_process_noise():
    return 1e-4 * np.eye(3)


@dataclass(frozen=True)
class MeasurementModel:
    Q: np.ndarray = field(default_factory=default_measurement_noise)  # measurement noise
    R: np.ndarray = field(default_factory=default_process_noise)  # process noise

    def __post_init__(self):
        q = _check_sym(self.Q, "measurement noise Q", strict_pd=True)
        r = _check_sym(self.R, "process noise R", strict_pd=False)
        if q.shape != (6, 6) or r.shape != (3, 3):
            raise DataError(f"Q must be 6x6 and R 3x3, got {q.shape}, {r.shape}")
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "R", r)

    @classmethod
    def from_diagonals(cls, q_visual, q_gnss, r_process):
        q = np.diag(np.concatenate([np.broadcast_to(q_visual, 3), np.broadcast_to(q_gnss, 3)]))
        return cls(q, np.diag(np.broadcast_to(np.asarray(r_process, float), 3)))

    @property
    def H(self):
        return H_STACKED


def _symmetrize(p):
    return 0.5 * (p + p.T)


def ekf_predict(s, u, R):
    u = np.asarray(u, dtype=float)
    R = np.asarray(R, dtype=float)
    if np.max(np.abs(R - R.T)) > 1e-12 * max(1.0, np.max(np.abs(R))):
        raise DataError("process noise R is not symmetric")
    return EkfState(s.x + u, _symmetrize(s.P + R))


def _update(s, z, h, q):
    p = s.P
    innov_cov = h @ p @ h.T + q
    if np.linalg.cond(innov_cov) > MAX_CONDITION:
        raise NumericalError("innovation covariance is singular (condition number > 1e12)")
    # K = P H^T S^-1, computed as a solve against the symmetric S
    gain = np.linalg.solve(innov_cov, h @ p).T
    x = s.x + gain @ (z - h @ s.x)
    p_new = p - gain @ h @ p
    return EkfState(x, _symmetrize(p_new))


def ekf_update(s, z, m=None):
    """Update with the stacked (visual, GNSS) measurement z in R^6."""
    m = m or MeasurementModel()
    z = np.asarray(z, dtype=float)
    if z.shape != (6,):
        raise DataError(f"stacked measurement must have 6 entries, got {z.shape}")
    return _update(s, z, H_STACKED, m.Q)


def ekf_update_visual(s, z_visual, m=None):
    """Update with the visual position only (measurement reduced to the top block)."""
    m = m or MeasurementModel()
    return _update(s, np.asarray(z_visual, dtype=float), H_VISUAL, m.Q[:3, :3])


@dataclass(frozen=True)
class FusionConfig:
    model: MeasurementModel = field(default_factory=MeasurementModel)
    max_dt: float = 0.05
    initial_covariance: Optional[np.ndarray] = None  # default: visual block of Q
    initial_position: Optional[np.ndarray] = None  # default: first visual position

    def __post_init__(self):
        if not self.max_dt > 0:
            raise ValueError("max_dt must be positive")


@dataclass(frozen=True)
class GnssTrack:
    timestamps: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if t.shape != (len(p),):
            raise DataError("GNSS timestamps and positions differ in length")
        if np.any(np.diff(t) <= 0):
            raise DataError("GNSS timestamps must be strictly ascending")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", p)

    def __len__(self):
        return len(self.timestamps)


def nearest_within(times, t, max_dt):
    """Index of the sample in sorted ``times`` nearest to ``t`` within max_dt, else None."""
    if len(times) == 0:
        return None
    j = int(np.searchsorted(times, t))
    best = None
    for c in (j - 1, j):
        if 0 <= c < len(times) and abs(times[c] - t) <= max_dt:
            if best is None or abs(times[c] - t) < abs(times[best] - t):
                best = c
    return best


def fuse_streams(visual, gnss, cfg=None):
    """Filter every visual sample; fused positions replace the visual translations.

    Orientation is taken from the visual stream. A visual sample with no
    GNSS fix within ``max_dt`` gets a visual-only update.
    """
    cfg = cfg or FusionConfig()
    if len(visual) == 0:
        raise DataError("visual stream is empty")
    if len(gnss) == 0:
        raise DataError("GNSS stream is empty")
    m = cfg.model
    vpos = visual.translations
    x0 = vpos[0] if cfg.initial_position is None else np.asarray(cfg.initial_position, float)
    p0 = m.Q[:3, :3] if cfg.initial_covariance is None else np.asarray(cfg.initial_covariance)
    state = EkfState(x0, p0)
    fused = np.empty_like(vpos)
    for i, t in enumerate(visual.timestamps):
        if i > 0:
            state = ekf_predict(state, vpos[i] - vpos[i - 1], m.R)
        j = nearest_within(gnss.timestamps, t, cfg.max_dt)
        if j is None:
            state = ekf_update_visual(state, vpos[i], m)
        else:
            state = ekf_update(state, np.concatenate([vpos[i], gnss.positions[j]]), m)
        fused[i] = state.x
    return Trajectory(visual.timestamps.copy(), visual.rotations.copy(), fused)


def load_gnss_csv(path):
    """Read ``timestamp,x,y,z`` rows (seconds, metres, local ENU); header optional."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts[0].lower() in ("timestamp", "t", "time"):
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 comma-separated fields")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite values")
    try:
        return GnssTrack(arr[:, 0], arr[:, 1:])
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_gnss_csv(track, path):
    with open(path, "w") as fh:
        fh.write("timestamp,x,y,z\n")
        for t, p in zip(track.timestamps, track.positions):
            fh.write(f"{t:.9f},{p[0]:.12g},{p[1]:.12g},{p[2]:.12g}\n")
