"""Cross-modal feature distillation losses and their analytic gradients.

All losses compare an RGB-branch map ``fr`` with a depth-branch map ``fd``
(both H x W x D). The learnable maps act on the depth side only:

* ``phi``: affine D -> D map applied to the per-channel spatial means,
* ``conv``: scalar 1x1 convolution (weight, bias) applied to the
  per-pixel channel means.
"""

from dataclasses import dataclass, replace

import numpy as np

from fourierslam.errors import NumericalError, ShapeError
from fourierslam.nn import as_feature_map


@dataclass(frozen=True)
class DistillationWeights:
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.delta) < 0:
            raise ValueError("distillation weights must be non-negative")


@dataclass(frozen=True)
class DistillationParams:
    phi_weight: np.ndarray
    phi_bias: np.ndarray
    conv_weight: float = 1.0
    conv_bias: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.phi_weight)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"phi must be square, got {w.shape}")
        if np.asarray(self.phi_bias).shape != (w.shape[0],):
            raise ShapeError(f"phi bias must have length {w.shape[0]}")

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d), np.zeros(d))

    @property
    def channels(self):
        return self.phi_weight.shape[0]


@dataclass
class DistillGrads:
    fr: np.ndarray
    fd: np.ndarray
    phi_weight: np.ndarray
    phi_bias: np.ndarray
    conv_weight: float = 0.0
    conv_bias: float = 0.0


def _pair(fr, fd):
    fr = as_feature_map(fr, "fr")
    fd = as_feature_map(fd, "fd")
    if fr.shape != fd.shape:
        raise ShapeError(f"feature maps differ in shape: {fr.shape} vs {fd.shape}")
    return fr, fd


def _check_params(p, d):
    if p.channels != d:
        raise ShapeError(f"phi is {p.channels}x{p.channels} but features have {d} channels")


def loss_l2(fr, fd):
    """Squared Frobenius norm of the difference, summed over every element."""
    fr, fd = _pair(fr, fd)
    diff = fr - fd
    return float(np.sum(diff * diff))


def _spatial_residual(fr, fd, p):
    m_r = fr.mean(axis=(0, 1))
    m_d = fd.mean(axis=(0, 1))
    return m_r - (p.phi_weight @ m_d + p.phi_bias), m_d


def loss_spatial(fr, fd, p=None):
    """Sum over channels of |spatial mean of fr - phi(spatial mean of fd)|."""
    fr, fd = _pair(fr, fd)
    p = p or DistillationParams.identity(fr.shape[-1])
    _check_params(p, fr.shape[-1])
    e, _ = _spatial_residual(fr, fd, p)
    return float(np.sum(np.abs(e)))


def _channel_residual(fr, fd, p):
    mu_r = fr.mean(axis=-1)
    mu_d = fd.mean(axis=-1)
    return mu_r - (p.conv_weight * mu_d + p.conv_bias), mu_d


def loss_channel(fr, fd, p=None):
    """Sum over pixels of |channel mean of fr - conv1x1(channel mean of fd)|."""
    fr, fd = _pair(fr, fd)
    p = p or DistillationParams.identity(fr.shape[-1])
    _check_params(p, fr.shape[-1])
    e, _ = _channel_residual(fr, fd, p)
    return float(np.sum(np.abs(e)))


def loss_components(fr, fd, p=None):
    return {
        "l2": loss_l2(fr, fd),
        "spatial": loss_spatial(fr, fd, p),
        "channel": loss_channel(fr, fd, p),
    }


def loss_total_distill(fr, fd, w=None, p=None):
    w = w or DistillationWeights()
    c = loss_components(fr, fd, p)
    return w.alpha * c["l2"] + w.beta * c["spatial"] + w.delta * c["channel"]


def grad_distill(fr, fd, w=None, p=None):
    """Analytic gradients of ``loss_total_distill``; sign(0) = 0 at kinks."""
    fr, fd = _pair(fr, fd)
    h, wd, d = fr.shape
    w = w or DistillationWeights()
    p = p or DistillationParams.identity(d)
    _check_params(p, d)

    diff = fr - fd
    g_fr = 2.0 * w.alpha * diff
    g_fd = -2.0 * w.alpha * diff

    e_s, m_d = _spatial_residual(fr, fd, p)
    s = np.sign(e_s)
    g_fr = g_fr + w.beta * s / (h * wd)
    g_fd = g_fd - w.beta * (p.phi_weight.T @ s) / (h * wd)
    g_phi_w = -w.beta * np.outer(s, m_d)
    g_phi_b = -w.beta * s

    e_c, mu_d = _channel_residual(fr, fd, p)
    t = np.sign(e_c)
    g_fr = g_fr + w.delta * t[..., None] / d
    g_fd = g_fd - w.delta * p.conv_weight * t[..., None] / d
    g_conv_w = -w.delta * float(np.sum(t * mu_d))
    g_conv_b = -w.delta * float(np.sum(t))

    return DistillGrads(g_fr, g_fd, g_phi_w, g_phi_b, g_conv_w, g_conv_b)


def demo_problem(seed, shape=(8, 8, 4)):
    """Seeded fixed RGB map and a depth map of mismatched magnitude and offset."""
    rng = np.random.default_rng(seed)
    fr = rng.standard_normal(shape)
    fd = 3.0 * fr + 1.5 + 0.5 * rng.standard_normal(shape)
    return fr, fd


def _step(fd, p, g, lr):
    return fd - lr * g.fd, replace(
        p,
        phi_weight=p.phi_weight - lr * g.phi_weight,
        phi_bias=p.phi_bias - lr * g.phi_bias,
        conv_weight=p.conv_weight - lr * g.conv_weight,
        conv_bias=p.conv_bias - lr * g.conv_bias,
    )


def distill_descent_demo(
    seed=2, steps=200, rate=0.05, weights=None, shape=(8, 8, 4), backtrack=True, max_halvings=30
):
    """Gradient descent on fd, phi and the channel conv against a fixed fr.

    Each step tries ``rate`` first; with ``backtrack`` it halves the step
    until the loss does not increase, and skips the step if that never
    happens within ``max_halvings``. The absolute-value terms have
    subgradients of fixed magnitude, so plain fixed-step descent
    (``backtrack=False``) oscillates once their residuals reach zero.

    Returns the loss trace of length ``steps + 1`` (initial loss first).
    Raises ``NumericalError`` if the loss exceeds 10x its initial value.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if rate < 0:
        raise ValueError("rate must be >= 0")
    weights = weights or DistillationWeights()
    fr, fd = demo_problem(seed, shape)
    p = DistillationParams.identity(shape[-1])
    loss = loss_total_distill(fr, fd, weights, p)
    trace = [loss]
    for step in range(steps):
        g = grad_distill(fr, fd, weights, p)
        lr = rate
        for _ in range(max_halvings + 1 if backtrack else 1):
            fd_new, p_new = _step(fd, p, g, lr)
            new_loss = loss_total_distill(fr, fd_new, weights, p_new)
            if not backtrack or new_loss <= loss:
                fd, p, loss = fd_new, p_new, new_loss
                break
            lr *= 0.5
        if not np.isfinite(loss) or loss > 10 * trace[0]:
            raise NumericalError(f"descent diverged at step {step + 1}: loss {loss:.6g}")
        trace.append(loss)
    return np.array(trace)
