"""Acceptance criteria 1-10, each checked against an oracle of its own.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
one PASS/FAIL line per criterion.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from fourierslam import attention as att
from fourierslam import bench
from fourierslam import distillation as dist
from fourierslam import ekf
from fourierslam import geometry as geo
from fourierslam import trajectory as tr
from fourierslam.nn import ConvParams, conv2d, layer_norm
from fourierslam.spectral import fft_forward, fft_inverse, spectral_correlate


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def dft_matrix(n, sign=-1.0):
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def dft2(x):
    """2D DFT of every channel of an (H, W, D) map straight from the definition."""
    fh, fw = dft_matrix(x.shape[0]), dft_matrix(x.shape[1])
    rows = np.einsum("bj,ijd->ibd", fw, x.astype(complex))
    return np.einsum("ai,ibd->abd", fh, rows)


def idft2(spec):
    h, w = spec.shape[:2]
    fh, fw = dft_matrix(h, 1.0), dft_matrix(w, 1.0)
    rows = np.einsum("bj,ijd->ibd", fw, spec)
    return np.einsum("ai,ibd->abd", fh, rows) / (h * w)


def dft_correlation(q, k):
    return idft2(dft2(q) * np.conj(dft2(k))).real


def sum_correlation(q, k):
    """A[m] = sum_n q[n + m] k[n] by explicit circular shifts."""
    h, w, _ = q.shape
    out = np.empty_like(q)
    for a in range(h):
        for b in range(w):
            out[a, b] = np.sum(np.roll(q, (-a, -b), axis=(0, 1)) * k, axis=(0, 1))
    return out


def rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def test_criterion_01_fft():
    t0 = time.perf_counter()
    shapes = [(n, 4, 1) for n in range(4, 257)] + [(4, n, 1) for n in range(4, 257)]
    rng = np.random.default_rng(2024)
    seeded = [(int(rng.integers(4, 257)), int(rng.integers(4, 257)), int(rng.integers(1, 4))) for _ in range(50)]
    worst_rt = worst_parseval = worst_def = 0.0
    for i, shape in enumerate(shapes + seeded):
        x = np.random.default_rng(i).standard_normal(shape)
        s = fft_forward(x, "2d")
        worst_rt = max(worst_rt, float(np.max(np.abs(fft_inverse(s) - x))))
        full = s.full()
        energy = float(np.sum(x * x))
        worst_parseval = max(worst_parseval, abs(float(np.sum(np.abs(full) ** 2)) / (shape[0] * shape[1]) - energy) / energy)
        if i % 7 == 0 or i >= len(shapes):
            worst_def = max(worst_def, rel(full, dft2(x)))
    elapsed = time.perf_counter() - t0
    ok = worst_rt <= 1e-12 and worst_parseval <= 1e-5 and worst_def <= 1e-9 and elapsed < 30
    record(1, ok, f"round-trip {worst_rt:.1e} (<= 1e-12), Parseval {worst_parseval:.1e} (<= 1e-5), "
                  f"vs DFT definition {worst_def:.1e}, {len(shapes) + 50} maps, {elapsed:.1f}s (< 30s)")


def test_criterion_02_correlation():
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for h in range(1, 33):
        for w in range(1, 33):
            for d in range(1, 5):
                g = np.random.default_rng(h * 10_000 + w * 10 + d)
                q, k = g.standard_normal((2, h, w, d))
                worst = max(worst, rel(spectral_correlate(q, k, "2d"), dft_correlation(q, k)))
                count += 1
    seeded_worst = 0.0
    for seed in range(50):
        g = np.random.default_rng(seed)
        h, w, d = (int(v) for v in g.integers(1, [33, 33, 5]))
        q, k = g.standard_normal((2, h, w, d))
        seeded_worst = max(seeded_worst, rel(spectral_correlate(q, k, "2d"), sum_correlation(q, k)))
        flat_ref = sum_correlation(q.reshape(1, h * w, d), k.reshape(1, h * w, d)).reshape(h, w, d)
        seeded_worst = max(seeded_worst, rel(spectral_correlate(q, k, "flat"), flat_ref))
    elapsed = time.perf_counter() - t0
    ok = max(worst, seeded_worst) <= 1e-4 and elapsed < 60
    record(2, ok, f"all {count} shapes <= 32x32x4 vs DFT definition {worst:.1e}, 50 seeds vs direct sum "
                  f"(2d + flat) {seeded_worst:.1e} (<= 1e-4), {elapsed:.1f}s (< 60s)")


def _zero_qk(p):
    z = ConvParams.zeros(p.channels, p.channels)
    return att.AttentionParams(z, z, p.v, p.norm, ConvParams(p.out.weight, np.zeros(p.channels)))


def _reference_block(residual, q, k, v, p):
    return residual + conv2d(layer_norm(sum_correlation(q, k), p.norm) * v, p.out)


def test_criterion_03_attention():
    identity_ok = True
    for h in range(1, 17):
        for w in range(1, 17):
            d = 1 + (h * w) % 4
            g = np.random.default_rng(h * 100 + w)
            f_r, f_d = g.standard_normal((2, h, w, d))
            p_r, p_d = (_zero_qk(att.AttentionParams.random(g, d)) for _ in range(2))
            identity_ok &= np.array_equal(att.fourier_self_attention(f_r, p_r), f_r)
            out_r, out_d = att.fourier_cross_attention(f_r, f_d, p_r, p_d)
            identity_ok &= np.array_equal(out_r, f_r) and np.array_equal(out_d, f_d)
    worst = 0.0
    for seed in range(40):
        g = np.random.default_rng(seed)
        h, w, d = (int(v) for v in g.integers(1, [17, 17, 5]))
        if seed == 0:
            h, w, d = 16, 16, 4
        f_r, f_d = g.standard_normal((2, h, w, d))
        p_r, p_d = att.AttentionParams.random(g, d), att.AttentionParams.random(g, d)
        qr, kr, vr = (conv2d(f_r, c) for c in (p_r.q, p_r.k, p_r.v))
        qd, kd, vd = (conv2d(f_d, c) for c in (p_d.q, p_d.k, p_d.v))
        worst = max(worst, rel(att.fourier_self_attention(f_r, p_r), _reference_block(f_r, qr, kr, vr, p_r)))
        out_r, out_d = att.fourier_cross_attention(f_r, f_d, p_r, p_d)
        worst = max(worst, rel(out_r, _reference_block(f_r, qd, kr, vr, p_r)))
        worst = max(worst, rel(out_d, _reference_block(f_d, qr, kd, vd, p_d)))
    ok = identity_ok and worst <= 1e-5
    record(3, ok, f"identity exact on all 256 spatial shapes: {bool(identity_ok)}, "
                  f"pipeline vs composed direct-sum oracle {worst:.1e} (<= 1e-5)")


def _fd_check(weights, seed, h=1e-5):
    rng = np.random.default_rng(seed)
    fr, fd = rng.standard_normal((2, 4, 4, 3))
    phi_w = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
    phi_b = 0.1 * rng.standard_normal(3)
    cw, cb = 1.0 + 0.2 * rng.standard_normal(), 0.1 * rng.standard_normal()
    params = [fr, fd, phi_w, phi_b, np.array(cw), np.array(cb)]

    def loss(ps):
        p = dist.DistillationParams(ps[2], ps[3], float(ps[4]), float(ps[5]))
        return dist.loss_total_distill(ps[0], ps[1], weights, p)

    # skip seeds whose residuals sit within the FD stencil of an |.| kink
    p = dist.DistillationParams(phi_w, phi_b, cw, cb)
    mean_r, mean_d = fr.mean(axis=(0, 1)), fd.mean(axis=(0, 1))
    mu_r, mu_d = fr.mean(axis=-1), fd.mean(axis=-1)
    margin = min(np.abs(mean_r - (phi_w @ mean_d + phi_b)).min(), np.abs(mu_r - (cw * mu_d + cb)).min())
    if margin < 1e-3:
        return None
    g = dist.grad_distill(fr, fd, weights, p)
    analytic = [g.fr, g.fd, g.phi_weight, g.phi_bias, np.array(g.conv_weight), np.array(g.conv_bias)]
    worst = 0.0
    for a_idx, base in enumerate(params):
        for idx in np.ndindex(base.shape):
            plus = [x.copy() for x in params]
            minus = [x.copy() for x in params]
            plus[a_idx][idx] += h
            minus[a_idx][idx] -= h
            numeric = (loss(plus) - loss(minus)) / (2 * h)
            exact = float(analytic[a_idx][idx])
            scale = max(abs(numeric), abs(exact))
            if scale > 1e-8:
                worst = max(worst, abs(numeric - exact) / scale)
    return worst


def test_criterion_04_distillation():
    losses = {
        "L2": dist.DistillationWeights(1, 0, 0),
        "spatial": dist.DistillationWeights(0, 1, 0),
        "channel": dist.DistillationWeights(0, 0, 1),
        "total": dist.DistillationWeights(1, 1, 1),
    }
    worst = {}
    for name, w in losses.items():
        errs, seed = [], 0
        while len(errs) < 10:
            r = _fd_check(w, 500 + seed)
            seed += 1
            if r is not None:
                errs.append(r)
        worst[name] = max(errs)
    trace = dist.distill_descent_demo(seed=2, steps=200, rate=0.05)
    ratio = trace[-1] / trace[0]
    monotone = float(np.mean(np.diff(trace) <= 0))
    ok = max(worst.values()) <= 1e-3 and ratio < 0.1 and monotone >= 0.9 and len(trace) == 201
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(4, ok, f"FD rel err (10 seeds each) {detail} (<= 1e-3); demo final/initial {ratio:.3f} (< 0.1), "
                  f"non-increasing {monotone:.0%} (>= 90%)")


def test_criterion_05_hand_values():
    ident = geo.Pose.identity()
    off = geo.Pose(np.eye(3), np.array([3.0, 4.0, 0.0]))
    err = np.broadcast_to([3.0, 4.0], (5, 5, 2))
    gt = np.zeros((5, 5, 2))
    got = [
        ("L_L2", dist.loss_l2(np.ones((2, 2, 1)), np.zeros((2, 2, 1))), 4.0),
        ("L_s", dist.loss_spatial(np.array([[[3.0, 4.0]]]), np.array([[[1.0, 1.0]]])), 5.0),
        ("L_c", dist.loss_channel(np.array([[[2.0, 2.0], [6.0, 6.0]]]), np.array([[[1.0, 1.0], [2.0, 2.0]]])), 5.0),
        ("flow M=1", geo.flow_loss([err], gt), 5.0),
        ("flow M=3", geo.flow_loss([err] * 3, gt, geo.LossConfig(gamma=0.5)), 8.75),
        ("pose M=2", geo.pose_loss([[off], [off]], [ident], geo.LossConfig(gamma=0.5)), 7.5),
    ]
    worst = max(abs(v - want) for _, v, want in got)
    record(5, worst <= 1e-9, ", ".join(f"{n}={v:g}" for n, v, _ in got) + f" (max err {worst:.1e} <= 1e-9)")


def test_criterion_06_se3():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(100):
        axis = rng.standard_normal(3)
        xi = np.concatenate([rng.uniform(-5, 5, 3), axis / np.linalg.norm(axis) * rng.uniform(-np.pi / 2, np.pi / 2)])
        worst = max(worst, float(np.max(np.abs(geo.se3_log(geo.se3_exp(xi)) - xi))))
    poses = [geo.se3_exp(rng.standard_normal(6)) for _ in range(6)]
    zero = geo.pose_loss([poses, poses, poses], poses)
    record(6, worst <= 1e-9 and zero == 0.0, f"exp/log round-trip {worst:.1e} (<= 1e-9) over 100 twists, "
                                             f"pose loss at T=G {zero}")


def test_criterion_07_ekf():
    x, d = np.array([0.5, 1.5, -1.0]), np.array([-0.2, 0.4, 0.9])
    # block-matrix hand result: S = [[2I, I], [I, 2I]], K = (1/3)[I I]
    post = ekf.ekf_update(ekf.EkfState(x, np.eye(3)), np.concatenate([x + d, x + d]),
                          ekf.MeasurementModel(np.eye(6), np.zeros((3, 3))))
    err_23 = float(np.max(np.abs(post.x - (x + 2.0 / 3.0 * d))))
    big = ekf.ekf_update(ekf.EkfState(x, np.eye(3)), np.concatenate([x + d, x + d]),
                         ekf.MeasurementModel(1e9 * np.eye(6), np.zeros((3, 3))))
    big_ratio = float(np.linalg.norm(big.x - x) / np.linalg.norm(d))
    rng = np.random.default_rng(31)
    a = rng.standard_normal((6, 6))
    m = ekf.MeasurementModel(a @ a.T / 6 + 0.05 * np.eye(6), 1e-3 * np.eye(3))
    s = ekf.EkfState(np.zeros(3), 0.5 * np.eye(3))
    asym, min_eig = 0.0, np.inf
    for _ in range(10_000):
        s = ekf.ekf_predict(s, 0.1 * rng.standard_normal(3), m.R)
        s = ekf.ekf_update(s, rng.standard_normal(6), m)
        asym = max(asym, float(np.max(np.abs(s.P - s.P.T))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(s.P).min()))
    ok = err_23 <= 1e-12 and big_ratio <= 1e-6 and asym <= 1e-9 and min_eig >= -1e-9
    record(7, ok, f"2/3 posterior err {err_23:.1e} (<= 1e-12), large-Q shift/|d| {big_ratio:.1e} (<= 1e-6), "
                  f"10k steps: asym {asym:.1e}, min eig {min_eig:.1e}")


def test_criterion_08_metrics():
    rng = np.random.default_rng(8)
    t = np.arange(60) * 0.05
    gt = tr.Trajectory.from_poses(t, [geo.se3_exp(rng.uniform(-2, 2, 6)) for _ in t])
    self_ate = tr.ate_rmse(gt, gt)
    rigid = geo.se3_exp([1.0, -0.5, 0.25, 0.4, 0.1, -0.7])
    aligned = tr.ate_rmse(gt.transformed(rigid), gt)
    shift = tr.Trajectory(gt.timestamps, gt.rotations, gt.translations + [0.0, 0.05, 0.0])
    unaligned = tr.ate_rmse(shift, gt, align=False)
    loop = tr.Trajectory(np.array([0.0, 1.0]), np.stack([np.eye(3)] * 2), np.array([[0.0, 0, 0], [0.0, 0.09, 0]]))
    _, prop = tr.accumulation_error(loop, 147.45)
    ok = self_ate == 0.0 and aligned <= 1e-9 and abs(unaligned - 5.0) <= 1e-12 and f"{prop:.2f}" == "0.06"
    record(8, ok, f"ATE(t,t)={self_ate}, aligned rigid offset {aligned:.1e} cm, unaligned 5 cm -> {unaligned:.9f} cm, "
                  f"0.09/147.45 m -> {prop:.2f}%")


def test_criterion_09_scaling():
    t0 = time.perf_counter()
    report = bench.run_bench(bench.parse_sizes("256..8192"), channels=4, reps=3, seed=0)
    slopes = bench.fit_scaling(report)
    dev, _ = bench.counter_ratio_deviation(report, min_size=1024)
    elapsed = time.perf_counter() - t0
    ok = slopes["naive"] >= 1.7 and slopes["spectral"] <= 1.4 and dev <= 0.10 and elapsed < 300
    record(9, ok, f"slopes naive {slopes['naive']:.2f} (>= 1.7), spectral {slopes['spectral']:.2f} (<= 1.4); "
                  f"counter ratio vs N/log2 N max dev {dev:.1%} (<= 10%); {elapsed:.0f}s (< 300s)")


def test_criterion_10_selftest_cli():
    proc = subprocess.run([sys.executable, "-m", "fourierslam", "selftest"], capture_output=True, text=True, timeout=600)
    lines = [ln for ln in proc.stdout.splitlines() if ln.startswith("[")]
    passed = sum(ln.startswith("[PASS]") for ln in lines)
    record(10, proc.returncode == 0 and passed == 8, f"selftest exit {proc.returncode}, {passed}/8 checks passed")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
