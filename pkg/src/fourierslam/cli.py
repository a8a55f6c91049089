"""Command-line entry point.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
Numeric hyperparameters come from a ``key = value`` file (``--config``);
explicit flags override it.
"""

import argparse
import sys

import numpy as np

from fourierslam import attention, bench, distillation, ekf, geometry, selftest, trajectory
from fourierslam.cliconfig import CliConfig, load_config
from fourierslam.config import precision
from fourierslam.errors import DataError, NumericalError
from fourierslam.tensor_io import read_tensor, write_tensor

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p):
    p.add_argument("--config", help="key = value run configuration")
    p.add_argument("--precision", type=int, choices=(32, 64))
    p.add_argument("--seed", type=int)


def build_parser():
    parser = _Parser(prog="fourierslam", description="Fourier attention, fusion and trajectory evaluation tools.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("attend", help="encode an RGB/depth pair into fused feature maps")
    p.add_argument("rgb", help="RGB image tensor (H, W, 3)")
    p.add_argument("depth", help="depth tensor (H, W, 1)")
    p.add_argument("params", help="parameter bundle directory")
    p.add_argument("-o", "--output", required=True, help="output prefix; writes PREFIX_rgb.fmft and PREFIX_depth.fmft")
    p.add_argument("--fft-mode", choices=("2d", "flat"))
    _add_common(p)

    p = sub.add_parser("init-params", help="write a seeded random parameter bundle")
    p.add_argument("directory")
    p.add_argument("--channels", type=int)
    p.add_argument("--stride", type=int, dest="feature_stride")
    _add_common(p)

    p = sub.add_parser("distill", help="distillation losses of two feature maps, or the descent demo")
    p.add_argument("fr", nargs="?", help="RGB-branch feature tensor")
    p.add_argument("fd", nargs="?", help="depth-branch feature tensor")
    p.add_argument("--demo", action="store_true", help="run gradient descent on a seeded problem")
    p.add_argument("--steps", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--plain", action="store_true", help="fixed step size (no backtracking)")
    p.add_argument("--trace", help="write the per-step loss trace as CSV")
    _add_common(p)

    p = sub.add_parser("losses", help="pose, flow and total training losses")
    p.add_argument("--pose", nargs="+", metavar="TUM", help="pose iterates, one trajectory per iteration")
    p.add_argument("--pose-gt", metavar="TUM")
    p.add_argument("--flow", nargs="+", metavar="FMFT", help="flow iterates (H, W, 2)")
    p.add_argument("--flow-gt", metavar="FMFT")
    p.add_argument("--distill", type=float, default=0.0, metavar="LK", help="distillation loss term")
    p.add_argument("--gamma", type=float)
    _add_common(p)

    p = sub.add_parser("fuse", help="EKF fusion of a visual trajectory with GNSS fixes")
    p.add_argument("visual", help="visual odometry trajectory (TUM)")
    p.add_argument("gnss", help="GNSS fixes CSV: timestamp,x,y,z")
    p.add_argument("-o", "--output", required=True, help="fused trajectory (TUM)")
    p.add_argument("--max-dt", type=float)
    _add_common(p)

    p = sub.add_parser("ate", help="absolute trajectory error in cm")
    p.add_argument("est")
    p.add_argument("gt")
    p.add_argument("--no-align", action="store_true")
    p.add_argument("--scale", action="store_true", help="also estimate a scale factor")
    p.add_argument("--max-dt", type=float, dest="ate_max_dt")
    p.add_argument("--report", help="write a MetricReport CSV")
    _add_common(p)

    p = sub.add_parser("flow-metrics", help="ACC_1px and AEPE for a flow field")
    p.add_argument("est")
    p.add_argument("gt")
    p.add_argument("--threshold", type=float, default=1.0)
    _add_common(p)

    p = sub.add_parser("accumulation", help="loop drift in m and as a percentage of loop length")
    p.add_argument("trajectory")
    p.add_argument("--loop-length", type=float, help="defaults to the trajectory's path length")
    p.add_argument("--reference", help="reference trajectory (TUM) whose final position closes the loop")
    _add_common(p)

    p = sub.add_parser("bench", help="spectral vs direct correlation scaling benchmark")
    p.add_argument("--sizes", default="256..8192", help="'lo..hi' (doubling) or comma list")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("-o", "--output", default="bench.csv")
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--fft-mode", choices=("2d", "flat"))
    _add_common(p)

    p = sub.add_parser("selftest", help="run every oracle-equivalence check")
    _add_common(p)
    return parser


def _config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else CliConfig()
    keys = set(CliConfig.__dataclass_fields__)
    overrides = {k: v for k, v in vars(args).items() if k in keys}
    try:
        return cfg.override(**overrides)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _read(path, what):
    try:
        return read_tensor(path)
    except FileNotFoundError:
        raise DataError(f"{path}: {what} file not found") from None


def cmd_attend(args, cfg):
    params = attention.load_encoder_params(args.params)
    rgb = _read(args.rgb, "RGB tensor")
    depth = _read(args.depth, "depth tensor")
    out_r, out_d = attention.encode_pair(rgb, depth, params, cfg.fft_mode)
    write_tensor(f"{args.output}_rgb.fmft", out_r)
    write_tensor(f"{args.output}_depth.fmft", out_d)
    print(f"wrote {args.output}_rgb.fmft and {args.output}_depth.fmft, shape {out_r.shape}")


def cmd_init_params(args, cfg):
    from fourierslam.config import get_dtype

    p = attention.init_encoder_params(cfg.channels, cfg.feature_stride, cfg.seed, get_dtype())
    attention.save_encoder_params(p, args.directory)
    print(f"wrote parameter bundle to {args.directory}")


def cmd_distill(args, cfg):
    w = cfg.weights()
    if args.demo:
        if args.fr or args.fd:
            raise UsageError("distill: --demo takes no feature files")
        trace = distillation.distill_descent_demo(
            seed=cfg.seed, steps=cfg.steps, rate=cfg.rate, weights=w, backtrack=not args.plain
        )
        if args.trace:
            with open(args.trace, "w") as fh:
                fh.write("step,loss\n")
                fh.writelines(f"{i},{v:.12g}\n" for i, v in enumerate(trace))
        drops = float(np.mean(np.diff(trace) <= 0) * 100)
        print(f"initial: {trace[0]:.6f}\nfinal: {trace[-1]:.6f}\nratio: {trace[-1] / trace[0]:.4f}")
        print(f"non-increasing steps: {drops:.1f}%")
        return
    if not (args.fr and args.fd):
        raise UsageError("distill: give FR and FD feature files, or --demo")
    fr, fd = _read(args.fr, "feature"), _read(args.fd, "feature")
    c = distillation.loss_components(fr, fd)
    total = distillation.loss_total_distill(fr, fd, w)
    print(f"L_L2: {c['l2']:.9g}\nL_s: {c['spatial']:.9g}\nL_c: {c['channel']:.9g}\nL_k: {total:.9g}")


def cmd_losses(args, cfg):
    lcfg = cfg.loss_config()
    lp = lo = 0.0
    if bool(args.pose) != bool(args.pose_gt) or bool(args.flow) != bool(args.flow_gt):
        raise UsageError("losses: iterates and ground truth must be given together")
    if not (args.pose or args.flow):
        raise UsageError("losses: give --pose/--pose-gt and/or --flow/--flow-gt")
    if args.pose:
        gt = trajectory.load_tum(args.pose_gt).poses
        iterates = [trajectory.load_tum(p).poses for p in args.pose]
        lp = geometry.pose_loss(iterates, gt, lcfg)
        print(f"L_p: {lp:.9g}")
    if args.flow:
        gt = _read(args.flow_gt, "flow")
        lo = geometry.flow_loss([_read(p, "flow") for p in args.flow], gt, lcfg)
        print(f"L_o: {lo:.9g}")
    print(f"L: {geometry.total_loss(args.distill, lp, lo):.9g}")


def cmd_fuse(args, cfg):
    visual = trajectory.load_tum(args.visual)
    gnss = ekf.load_gnss_csv(args.gnss)
    fused = ekf.fuse_streams(visual, gnss, cfg.fusion_config())
    trajectory.save_tum(fused, args.output)
    print(f"fused {len(fused)} poses -> {args.output}")


def cmd_ate(args, cfg):
    est, gt = trajectory.load_tum(args.est), trajectory.load_tum(args.gt)
    value = trajectory.ate_rmse(est, gt, align=not args.no_align, max_dt=cfg.ate_max_dt, with_scale=args.scale)
    print(f"ATE: {value:.3f} cm")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(trajectory.MetricReport(ate_rmse=value).to_csv())


def cmd_flow_metrics(args, cfg):
    acc, aepe = trajectory.flow_metrics(_read(args.est, "flow"), _read(args.gt, "flow"), args.threshold)
    print(f"ACC_{args.threshold:g}px: {acc:.2f} %\nAEPE: {aepe:.4f} px")


def cmd_accumulation(args, cfg):
    traj = trajectory.load_tum(args.trajectory)
    ref = trajectory.load_tum(args.reference) if args.reference else None
    length = args.loop_length if args.loop_length is not None else trajectory.path_length(traj)
    err, prop = trajectory.accumulation_error(traj, length, ref)
    print(trajectory.MetricReport(accumulation_error=err, proportion=prop).to_text(), end="")


def cmd_bench(args, cfg):
    try:
        sizes = bench.parse_sizes(args.sizes)
    except ValueError as exc:
        raise UsageError(f"bench: bad --sizes: {exc}") from None
    report = bench.run_bench(sizes, args.channels, args.reps, cfg.seed, args.parallel, cfg.fft_mode)
    report.write_csv(args.output)
    print(f"wrote {len(report.rows)} rows to {args.output}")
    if len(report.sizes()) >= 4:
        for method, slope in bench.fit_scaling(report).items():
            print(f"slope {method}: {slope:.3f}")
    if any(n >= 1024 for n in sizes) and not args.parallel:
        dev, _ = bench.counter_ratio_deviation(report)
        print(f"multiply-ratio deviation from N/log2 N: {dev * 100:.1f}%")


def cmd_selftest(args, cfg):
    return EXIT_OK if selftest.run_all() else EXIT_NUMERICAL


COMMANDS = {
    "attend": cmd_attend,
    "init-params": cmd_init_params,
    "distill": cmd_distill,
    "losses": cmd_losses,
    "fuse": cmd_fuse,
    "ate": cmd_ate,
    "flow-metrics": cmd_flow_metrics,
    "accumulation": cmd_accumulation,
    "bench": cmd_bench,
    "selftest": cmd_selftest,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        cfg = _config(args)
        with precision(cfg.precision):
            code = COMMANDS[args.command](args, cfg)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fourierslam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError, ValueError) as exc:
        detail = f"{exc.filename}: {exc.strerror}" if isinstance(exc, OSError) and exc.filename else str(exc)
        print(f"error: {detail}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
