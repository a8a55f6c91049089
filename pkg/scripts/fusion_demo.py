"""Fuse a drifting visual trajectory with noisy GNSS fixes and report ATE and loop drift.

    python scripts/fusion_demo.py --seconds 60 --drift 0.002
"""

import argparse

import numpy as np

from fourierslam import ekf
from fourierslam import trajectory as tr


def loop_track(seconds, rate):
    t = np.arange(0.0, seconds, 1.0 / rate)
    phase = 2 * np.pi * t / seconds
    pos = np.stack([10 * np.cos(phase) - 10, 6 * np.sin(phase), 0.2 * np.sin(2 * phase)], axis=1)
    return tr.Trajectory(t, np.stack([np.eye(3)] * len(t)), pos)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=60.0)
    ap.add_argument("--drift", type=float, default=0.002, help="visual drift per step, m")
    ap.add_argument("--gnss-sigma", type=float, default=0.02, help="GNSS noise, m")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    truth = loop_track(args.seconds, 20)
    steps = rng.normal(args.drift, args.drift, truth.translations.shape)
    visual = tr.Trajectory(truth.timestamps, truth.rotations, truth.translations + np.cumsum(steps, axis=0))
    g_idx = np.arange(0, len(truth), 2)  # GNSS at 10 Hz
    gnss = ekf.GnssTrack(truth.timestamps[g_idx] + 0.003,
                         truth.translations[g_idx] + args.gnss_sigma * rng.standard_normal((len(g_idx), 3)))
    fused = ekf.fuse_streams(visual, gnss)

    length = tr.path_length(truth)
    for name, traj in (("visual", visual), ("fused", fused)):
        ate = tr.ate_rmse(traj, truth, align=False)
        err, prop = tr.accumulation_error(traj, length, reference=truth)
        print(f"{name:>7}: ATE {ate:8.3f} cm   end drift {err:.3f} m ({prop:.2f}% of {length:.1f} m)")


if __name__ == "__main__":
    main()
