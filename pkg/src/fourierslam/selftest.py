"""Oracle-equivalence checks run by ``fourierslam selftest``.

Each check returns ``(ok, detail)``. The checks pair every fast path with
an independent reference: direct DFT sums, direct-summation correlation,
central finite differences, hand-derived closed forms.
"""

import time

import numpy as np

from fourierslam import attention as att
from fourierslam import distillation as dist
from fourierslam import ekf
from fourierslam import geometry as geo
from fourierslam import trajectory as tr
from fourierslam.nn import ConvParams, LayerNormParams, conv2d, layer_norm
from fourierslam.spectral import (
    dft_oracle,
    fft_forward,
    fft_inverse,
    naive_correlate_oracle,
    spectral_correlate,
)


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def check_fft(seeds=50):
    worst_rt, worst_parseval, worst_dft = 0.0, 0.0, 0.0
    shapes = [(n, 4, 1) for n in range(4, 257)] + [(3, n, 1) for n in range(4, 257)]
    rng = np.random.default_rng(1234)
    shapes += [(int(rng.integers(4, 257)), int(rng.integers(4, 257)), int(rng.integers(1, 5))) for _ in range(seeds)]
    for i, shape in enumerate(shapes):
        x = np.random.default_rng(i).standard_normal(shape)
        s = fft_forward(x)
        worst_rt = max(worst_rt, float(np.max(np.abs(fft_inverse(s) - x))))
        full = s.full()
        energy = np.sum(x * x)
        worst_parseval = max(worst_parseval, abs(np.sum(np.abs(full) ** 2) / x.shape[0] / x.shape[1] - energy) / energy)
        if shape[0] == 3:  # 1D extents: compare against the direct DFT definition
            ref = dft_oracle(dft_oracle(np.moveaxis(x, -1, 0)).swapaxes(1, 2)).swapaxes(1, 2)
            worst_dft = max(worst_dft, _rel(full, np.moveaxis(ref, 0, -1)))
    ok = worst_rt <= 1e-12 and worst_parseval <= 1e-5 and worst_dft <= 1e-9
    return ok, f"round-trip {worst_rt:.2e}, Parseval {worst_parseval:.2e}, vs DFT {worst_dft:.2e} over {len(shapes)} maps"


def check_correlation(seeds=50):
    worst = 0.0
    cases = [(h, w, 1 + (h + w) % 4) for h in range(1, 33) for w in range(1, 33)]
    rng = np.random.default_rng(99)
    cases += [(int(rng.integers(1, 33)), int(rng.integers(1, 33)), int(rng.integers(1, 5))) for _ in range(seeds)]
    for i, shape in enumerate(cases):
        g = np.random.default_rng(i)
        q, k = g.standard_normal(shape), g.standard_normal(shape)
        for mode in ("2d", "flat") if i >= len(cases) - seeds else ("2d",):
            worst = max(worst, _rel(spectral_correlate(q, k, mode), naive_correlate_oracle(q, k, mode)))
    return worst <= 1e-4, f"max relative deviation {worst:.2e} over {len(cases)} shapes"


def _zero_qk(p):
    d = p.channels
    z = ConvParams.zeros(d, d)
    return att.AttentionParams(z, z, p.v, p.norm, ConvParams(p.out.weight, np.zeros(d)))


def reference_self_attention(f, p):
    q, k, v = conv2d(f, p.q), conv2d(f, p.k), conv2d(f, p.v)
    return f + conv2d(layer_norm(naive_correlate_oracle(q, k), p.norm) * v, p.out)


def reference_cross_attention(f_r, f_d, p_r, p_d):
    q_r, k_r, v_r = conv2d(f_r, p_r.q), conv2d(f_r, p_r.k), conv2d(f_r, p_r.v)
    q_d, k_d, v_d = conv2d(f_d, p_d.q), conv2d(f_d, p_d.k), conv2d(f_d, p_d.v)
    out_r = f_r + conv2d(layer_norm(naive_correlate_oracle(q_d, k_r), p_r.norm) * v_r, p_r.out)
    out_d = f_d + conv2d(layer_norm(naive_correlate_oracle(q_r, k_d), p_d.norm) * v_d, p_d.out)
    return out_r, out_d


def check_attention(cases=20):
    identity_ok = True
    worst = 0.0
    for seed in range(cases):
        rng = np.random.default_rng(seed)
        h, w, d = (int(v) for v in rng.integers(1, [17, 17, 5]))
        f_r, f_d = rng.standard_normal((h, w, d)), rng.standard_normal((h, w, d))
        p_r, p_d = att.AttentionParams.random(rng, d), att.AttentionParams.random(rng, d)
        z_r, z_d = _zero_qk(p_r), _zero_qk(p_d)
        identity_ok &= np.array_equal(att.fourier_self_attention(f_r, z_r), f_r)
        c_r, c_d = att.fourier_cross_attention(f_r, f_d, z_r, z_d)
        identity_ok &= np.array_equal(c_r, f_r) and np.array_equal(c_d, f_d)
        worst = max(worst, _rel(att.fourier_self_attention(f_r, p_r), reference_self_attention(f_r, p_r)))
        for got, ref in zip(att.fourier_cross_attention(f_r, f_d, p_r, p_d), reference_cross_attention(f_r, f_d, p_r, p_d)):
            worst = max(worst, _rel(got, ref))
    ok = bool(identity_ok) and worst <= 1e-5
    return ok, f"identity invariant {'holds' if identity_ok else 'BROKEN'}, pipeline deviation {worst:.2e}"


def _pack(fr, fd, p):
    return np.concatenate([fr.ravel(), fd.ravel(), p.phi_weight.ravel(), p.phi_bias, [p.conv_weight, p.conv_bias]])


def _unpack(v, shape):
    n, d = int(np.prod(shape)), shape[-1]
    fr, fd = v[:n].reshape(shape), v[n : 2 * n].reshape(shape)
    o = 2 * n
    p = dist.DistillationParams(v[o : o + d * d].reshape(d, d), v[o + d * d : o + d * d + d], v[-2], v[-1])
    return fr, fd, p


def finite_difference_check(loss_name, seed, shape=(4, 4, 3), h=1e-5, rtol=1e-3):
    """Central differences of one loss vs ``grad_distill``; coordinates near |.| kinks are skipped."""
    w = {
        "l2": dist.DistillationWeights(1, 0, 0),
        "spatial": dist.DistillationWeights(0, 1, 0),
        "channel": dist.DistillationWeights(0, 0, 1),
        "total": dist.DistillationWeights(0.7, 1.3, 0.9),
    }[loss_name]
    rng = np.random.default_rng(seed)
    d = shape[-1]
    fr, fd = rng.standard_normal(shape), rng.standard_normal(shape)
    p = dist.DistillationParams(np.eye(d) + 0.2 * rng.standard_normal((d, d)), 0.1 * rng.standard_normal(d),
                                1.0 + 0.2 * rng.standard_normal(), 0.1 * rng.standard_normal())
    g = dist.grad_distill(fr, fd, w, p)
    analytic = np.concatenate([g.fr.ravel(), g.fd.ravel(), g.phi_weight.ravel(), g.phi_bias, [g.conv_weight, g.conv_bias]])
    v0 = _pack(fr, fd, p)

    def f(v):
        return dist.loss_total_distill(*_unpack(v, shape)[:2], w, _unpack(v, shape)[2])

    def kink_margin(v):
        a, b, q = _unpack(v, shape)
        es, _ = dist._spatial_residual(a, b, q)
        ec, _ = dist._channel_residual(a, b, q)
        return min(np.min(np.abs(es)), np.min(np.abs(ec)))

    if kink_margin(v0) < 1e-3:
        return None
    worst = 0.0
    for i in range(len(v0)):
        e = np.zeros_like(v0)
        e[i] = h
        fd_est = (f(v0 + e) - f(v0 - e)) / (2 * h)
        scale = max(abs(fd_est), abs(analytic[i]))
        if scale < 1e-8:
            continue
        worst = max(worst, abs(fd_est - analytic[i]) / scale)
    return worst


def check_distillation(seeds=10):
    worst = 0.0
    checked = 0
    for name in ("l2", "spatial", "channel", "total"):
        seed, done = 0, 0
        while done < seeds:
            r = finite_difference_check(name, 1000 * seed + 7)
            seed += 1
            if r is None:
                continue
            worst = max(worst, r)
            done += 1
            checked += 1
    trace = dist.distill_descent_demo(seed=2, steps=200, rate=0.05)
    ratio = trace[-1] / trace[0]
    monotone = float(np.mean(np.diff(trace) <= 0))
    ok = worst <= 1e-3 and ratio < 0.1 and monotone >= 0.9
    return ok, f"grad rel err {worst:.2e} ({checked} cases), demo final/initial {ratio:.3f}, non-increasing {monotone:.0%}"


def check_hand_values():
    got = {}
    got["L_L2"] = dist.loss_l2(np.ones((2, 2, 1)), np.zeros((2, 2, 1)))
    got["L_s"] = dist.loss_spatial(np.array([[[3.0, 4.0]]]), np.array([[[1.0, 1.0]]]))
    got["L_c"] = dist.loss_channel(np.array([[[2.0, 2.0], [6.0, 6.0]]]), np.array([[[1.0, 1.0], [2.0, 2.0]]]))
    err = np.zeros((3, 4, 2))
    gt = np.zeros((3, 4, 2))
    err[...] = (3.0, 4.0)
    got["flow M=1"] = geo.flow_loss([err], gt)
    got["flow M=3"] = geo.flow_loss([err] * 3, gt, geo.LossConfig(gamma=0.5))
    off = geo.Pose(np.eye(3), np.array([3.0, 4.0, 0.0]))
    got["pose M=2"] = geo.pose_loss([[off], [off]], [geo.Pose.identity()], geo.LossConfig(gamma=0.5))
    want = {"L_L2": 4.0, "L_s": 5.0, "L_c": 5.0, "flow M=1": 5.0, "flow M=3": 8.75, "pose M=2": 7.5}
    bad = {k: got[k] for k in want if abs(got[k] - want[k]) > 1e-9}
    return not bad, "all hand values exact to 1e-9" if not bad else f"mismatch: {bad}"


def check_se3(n=100):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(n):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        xi = np.concatenate([rng.uniform(-2, 2, 3), axis * rng.uniform(0, np.pi / 2)])
        worst = max(worst, float(np.max(np.abs(geo.se3_log(geo.se3_exp(xi)) - xi))))
    poses = [geo.se3_exp(rng.standard_normal(6)) for _ in range(5)]
    zero = geo.pose_loss([poses, poses], poses)
    return worst <= 1e-9 and zero == 0.0, f"round-trip {worst:.2e}, pose loss at T=G {zero}"


def check_ekf(steps=10_000):
    x, d = np.array([1.0, -2.0, 0.5]), np.array([0.3, -0.1, 0.7])
    m = ekf.MeasurementModel(np.eye(6), np.zeros((3, 3)))
    post = ekf.ekf_update(ekf.EkfState(x, np.eye(3)), np.concatenate([x + d, x + d]), m)
    err_23 = float(np.max(np.abs(post.x - (x + 2.0 / 3.0 * d))))

    big = ekf.MeasurementModel(1e9 * np.eye(6), np.zeros((3, 3)))
    post = ekf.ekf_update(ekf.EkfState(x, np.eye(3)), np.concatenate([x + d, x + d]), big)
    big_ok = np.linalg.norm(post.x - x) <= 1e-6 * np.linalg.norm(d)

    rng = np.random.default_rng(17)
    a = rng.standard_normal((6, 6))
    model = ekf.MeasurementModel(a @ a.T / 6 + 0.01 * np.eye(6), 1e-3 * np.eye(3))
    s = ekf.EkfState(np.zeros(3), np.eye(3))
    worst_asym, worst_eig = 0.0, np.inf
    for _ in range(steps):
        s = ekf.ekf_predict(s, rng.standard_normal(3) * 0.1, model.R)
        s = ekf.ekf_update(s, rng.standard_normal(6), model)
        worst_asym = max(worst_asym, float(np.max(np.abs(s.P - s.P.T))))
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(s.P).min()))
    ok = err_23 <= 1e-12 and big_ok and worst_asym <= 1e-9 and worst_eig >= -1e-9
    return ok, (f"2/3 posterior err {err_23:.1e}, large-Q limit {'ok' if big_ok else 'FAILED'}, "
                f"asym {worst_asym:.1e}, min eig {worst_eig:.2e} over {steps} steps")


def _synthetic_trajectory(seed, n=50):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * 0.1
    poses = [geo.se3_exp(np.concatenate([rng.uniform(-3, 3, 3), rng.uniform(-1, 1, 3)])) for _ in range(n)]
    return tr.Trajectory.from_poses(t, poses)


def check_metrics():
    gt = _synthetic_trajectory(3)
    self_ate = tr.ate_rmse(gt, gt)
    rigid = geo.se3_exp([0.4, -1.0, 2.0, 0.3, -0.2, 0.5])
    aligned = tr.ate_rmse(gt.transformed(rigid), gt)
    shifted = tr.Trajectory(gt.timestamps, gt.rotations, gt.translations + [0.05, 0.0, 0.0])
    unaligned = tr.ate_rmse(shifted, gt, align=False)
    loop = tr.Trajectory(np.array([0.0, 1.0]), np.stack([np.eye(3)] * 2), np.array([[0.0, 0, 0], [0.09, 0, 0]]))
    _, proportion = tr.accumulation_error(loop, 147.45)
    ok = self_ate == 0.0 and aligned <= 1e-9 and abs(unaligned - 5.0) <= 1e-9 and round(proportion, 2) == 0.06
    return ok, (f"ATE(t,t)={self_ate}, aligned rigid offset {aligned:.1e} cm, "
                f"unaligned 5 cm shift {unaligned:.12f} cm, proportion {proportion:.4f}% -> {round(proportion, 2)}%")


CHECKS = [
    ("1 FFT round-trip / Parseval", check_fft),
    ("2 spectral vs direct correlation", check_correlation),
    ("3 attention identity + oracle pipeline", check_attention),
    ("4 distillation gradients + descent demo", check_distillation),
    ("5 hand-computed loss values", check_hand_values),
    ("6 SE(3) exp/log", check_se3),
    ("7 EKF fusion", check_ekf),
    ("8 trajectory metrics", check_metrics),
]


def run_all(stream=None):
    """Run every check, print one line each; returns True if all pass."""
    import sys

    stream = stream or sys.stdout
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, reported rather than raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({time.perf_counter() - t0:.1f}s)", file=stream)
    return all_ok
