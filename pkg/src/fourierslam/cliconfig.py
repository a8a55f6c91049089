"""``key = value`` run configuration shared by the CLI subcommands."""

from dataclasses import dataclass, fields, replace

import numpy as np

from fourierslam.distillation import DistillationWeights
from fourierslam.ekf import FusionConfig, MeasurementModel
from fourierslam.errors import DataError
from fourierslam.geometry import LossConfig


def _floats(text):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) not in (1, 3):
        raise ValueError("expected one value or three comma-separated values")
    return tuple(vals) if len(vals) == 3 else vals[0]


@dataclass(frozen=True)
class CliConfig:
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 1.0
    gamma: float = 0.9
    rot_weight: float = 1.0
    ekf_q_visual: object = 0.01  # scalar or (x, y, z) diagonal, m^2
    ekf_q_gnss: object = 0.0004
    ekf_r: object = 1e-4
    max_dt: float = 0.05  # GNSS / visual association for fusion, s
    ate_max_dt: float = 0.02  # trajectory association for ATE, s
    feature_stride: int = 8
    channels: int = 16
    precision: int = 64
    fft_mode: str = "2d"
    seed: int = 0
    steps: int = 200
    rate: float = 0.05

    def validate(self):
        self.weights()
        self.loss_config()
        self.fusion_config()
        if self.ate_max_dt <= 0:
            raise ValueError("ate_max_dt must be positive")
        if self.feature_stride < 1 or self.channels < 1:
            raise ValueError("feature_stride and channels must be >= 1")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.fft_mode not in ("2d", "flat"):
            raise ValueError("fft_mode must be 2d or flat")
        if self.steps < 1 or self.rate < 0:
            raise ValueError("steps must be >= 1 and rate >= 0")
        return self

    def weights(self):
        return DistillationWeights(self.alpha, self.beta, self.delta)

    def loss_config(self):
        return LossConfig(gamma=self.gamma, rot_weight=self.rot_weight)

    def measurement_model(self):
        return MeasurementModel.from_diagonals(
            np.asarray(self.ekf_q_visual, float),
            np.asarray(self.ekf_q_gnss, float),
            np.asarray(self.ekf_r, float),
        )

    def fusion_config(self):
        return FusionConfig(model=self.measurement_model(), max_dt=self.max_dt)

    def override(self, **kwargs):
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None}).validate()


_TYPES = {
    "alpha": float, "beta": float, "delta": float, "gamma": float, "rot_weight": float,
    "ekf_q_visual": _floats, "ekf_q_gnss": _floats, "ekf_r": _floats,
    "max_dt": float, "ate_max_dt": float, "feature_stride": int, "channels": int,
    "precision": int, "fft_mode": str, "seed": int, "steps": int, "rate": float,
}
KEYS = tuple(f.name for f in fields(CliConfig))


def parse_config(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise DataError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _TYPES[key](value)
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    try:
        return CliConfig(**values).validate()
    except ValueError as exc:
        raise DataError(f"{source}: {exc}") from None


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), source=str(path))
