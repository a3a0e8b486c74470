"""Command-line entry point: simulate, train, classify, run, evaluate, plot.

The `run` command executes the fused pipeline: per-sample EKF propagation;
at each window start a pose clone; at each completed window the raw IMU is
rotated by the attitude estimated at the window start, routed to a platform
expert (or a fixed/oracle source), and the predicted displacement plus
covariance is fused as an EKF measurement.

Exit codes: 0 success, 2 malformed input, 3 numerical failure, 4 missing
artifact.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

import numpy as np

from . import dataio, evalkit, simkit
from .errors import (MalformedInput, MissingArtifact, NumericalError,
                     XioError)
from .eskf import (FilterConfig, clone_pose, init_state, load_filter_config,
                   measurement_update, propagate, rotate_window)
from .geometry import remove_yaw
from .network import (DisplacementNet, NetConfig,
                      load_displacement_checkpoint,
                      save_displacement_checkpoint)
from .router import (PlatformLabel, classify, load_classifier_checkpoint,
                     save_classifier_checkpoint, train_classifier,
                     write_routing_log, PlatformClassifier, ClassifierConfig)
from .training import (LossConfig, TrainConfig, load_train_manifest,
                       make_windows, train_displacement)
from .types import DisplacementEstimate, ImuSequence, Trajectory

ORACLE_SIGMA = 1e-8  # variance of injected oracle displacements [m^2]


@dataclass
class PipelineResult:
    trajectory: Trajectory
    report: evalkit.MetricReport | None
    decisions: list
    n_updates: int


def run_pipeline(imu: ImuSequence, gt: Trajectory | None,
                 cfg: FilterConfig, classifier=None, experts: dict | None = None,
                 fixed_expert: DisplacementNet | None = None,
                 oracle: bool = False, no_update: bool = False,
                 rte_window: float = 60.0) -> PipelineResult:
    """Filter a sequence end to end and (when ground truth is present)
    evaluate it."""
    if oracle and gt is None:
        raise MalformedInput("oracle displacement updates need ground truth")
    if not (no_update or oracle or fixed_expert is not None
            or (classifier is not None and experts)):
        raise MissingArtifact(
            "need a classifier plus experts, --expert, --oracle-displacement,"
            " or --no-update")
    length = cfg.window_len
    if cfg.update_stride != length:
        raise MalformedInput("update_stride must equal window_len with a "
                             "single-clone filter")

    if gt is not None:
        r0 = gt.rotation_at(float(imu.t[0]))
        v0 = gt.velocity_at(float(imu.t[0]))
        p0 = gt.position_at(float(imu.t[0]))
    else:
        r0, v0, p0 = np.eye(3), np.zeros(3), np.zeros(3)
    state, cov = init_state(r0, v0, p0, np.zeros(3), np.zeros(3),
                            cfg.initial_cov(), cfg.n_clones)

    n = len(imu)
    dt_nominal = imu.dt
    est_rot = np.empty((n, 3, 3))
    est_p = np.empty((n, 3))
    est_v = np.empty((n, 3))
    decisions: list = []
    n_updates = 0
    window_start = 0
    clone_rot = state.rot.copy()  # estimate attitude at the window start
    state, cov = clone_pose(state, cov)

    for k in range(n):
        boundary = k > 0 and (k - window_start) >= length
        if boundary:
            if not no_update:
                window = imu.slice(window_start, k)
                if oracle:
                    t_i, t_j = float(imu.t[window_start]), float(imu.t[k])
                    r_i = gt.rotation_at(t_i)
                    d = r_i.T @ (gt.position_at(t_j) - gt.position_at(t_i))
                    meas = DisplacementEstimate(
                        d=d, cov=ORACLE_SIGMA * np.eye(3))
                else:
                    aligned = rotate_window(window, clone_rot)
                    if fixed_expert is not None:
                        expert = fixed_expert
                    else:
                        decision = classify(aligned, classifier)
                        decisions.append(decision)
                        if decision.label not in experts:
                            raise MissingArtifact(
                                f"no expert for {decision.label.name}")
                        expert = experts[decision.label]
                    net_est = expert.predict(aligned)
                    tilt = remove_yaw(clone_rot)
                    meas = DisplacementEstimate(
                        d=tilt.T @ net_est.d,
                        cov=tilt.T @ net_est.cov @ tilt)
                state, cov = measurement_update(state, cov, meas,
                                                clone_index=0)
                n_updates += 1
            window_start = k
            clone_rot = state.rot.copy()
            state, cov = clone_pose(state, cov)

        est_rot[k] = state.rot
        est_p[k] = state.p
        est_v[k] = state.v
        dt = float(imu.t[k + 1] - imu.t[k]) if k + 1 < n else dt_nominal
        state, cov = propagate(state, cov, imu[k], dt, cfg.noise)

    traj = Trajectory(imu.t.copy(), est_rot, est_p, est_v)
    report = None
    if gt is not None:
        report = evalkit.evaluate_pair(traj, gt, rte_window=rte_window)
    return PipelineResult(trajectory=traj, report=report,
                          decisions=decisions, n_updates=n_updates)


# -- subcommands ---------------------------------------------------------------

def _cmd_simulate(args) -> int:
    spec = simkit.TrajectorySpec(kind=args.kind, duration=args.duration,
                                 speed=args.speed, gait_freq=args.gait_freq,
                                 radius=args.radius, seed=args.seed)
    traj = simkit.synth_trajectory(spec)
    imu = simkit.derive_imu(traj)
    noise = simkit.ImuNoiseSpec(
        sigma_g=args.sigma_g, sigma_a=args.sigma_a, sigma_bg=args.sigma_bg,
        sigma_ba=args.sigma_ba,
        init_bg=np.array(args.bias_g), init_ba=np.array(args.bias_a),
        seed=args.seed + 1)
    imu = simkit.corrupt(imu, noise)
    dataio.save_dataset(args.out, imu, traj)
    print(f"wrote {args.out} ({len(imu)} samples, kind={args.kind})")
    return 0


def _load_windows(paths, length, stride):
    samples = []
    for path in paths:
        imu, gt = dataio.load_dataset(path)
        if gt is None:
            raise MalformedInput(f"{path}: training data needs ground truth")
        samples.extend(make_windows(gt, imu, length, stride))
    return samples


def _cmd_train(args) -> int:
    man = load_train_manifest(args.manifest)
    train_cfg = TrainConfig(**man.train)
    out_dir = args.out_dir
    import os
    os.makedirs(out_dir, exist_ok=True)
    if man.task == "expert":
        if not man.data:
            raise MalformedInput("expert training needs 'data = ...' paths")
        samples = _load_windows(man.data, man.window_len, man.stride)
        net = DisplacementNet(NetConfig(**man.net))
        log_path = os.path.join(out_dir, "train_log.csv")
        train_displacement(net, samples, LossConfig(**man.loss), train_cfg,
                           max_steps=man.max_steps or None,
                           log_path=log_path)
        ckpt = os.path.join(out_dir, "expert.npz")
        save_displacement_checkpoint(ckpt, net)
        print(f"wrote {ckpt} and {log_path} ({len(samples)} windows)")
    else:
        if not (man.data_human and man.data_quadruped):
            raise MalformedInput(
                "classifier training needs data.human and data.quadruped")
        hum = _load_windows(man.data_human, man.window_len, man.stride)
        quad = _load_windows(man.data_quadruped, man.window_len, man.stride)
        windows = [s.window for s in hum] + [s.window for s in quad]
        labels = [PlatformLabel.HUMAN] * len(hum) \
            + [PlatformLabel.QUADRUPED] * len(quad)
        net = PlatformClassifier(ClassifierConfig(seed=train_cfg.seed))
        train_classifier(net, windows, labels, train_cfg,
                         max_steps=man.max_steps or None)
        ckpt = os.path.join(out_dir, "classifier.npz")
        save_classifier_checkpoint(ckpt, net)
        print(f"wrote {ckpt} ({len(windows)} windows)")
    return 0


def _cmd_classify(args) -> int:
    imu, gt = dataio.load_dataset(args.input)
    net = load_classifier_checkpoint(args.checkpoint)
    length = args.window_len
    decisions = []
    for start in range(0, len(imu) - length + 1, length):
        window = imu.slice(start, start + length)
        r_hat = gt.rotation_at(float(imu.t[start])) if gt is not None \
            else np.eye(3)
        decisions.append(classify(rotate_window(window, r_hat), net))
    write_routing_log(args.out, decisions)
    counts = {label.name: sum(d.label == label for d in decisions)
              for label in PlatformLabel}
    print(f"wrote {args.out}: {counts}")
    return 0


def _cmd_run(args) -> int:
    import os
    imu, gt = dataio.load_dataset(args.input)
    cfg = load_filter_config(args.filter_config) if args.filter_config \
        else FilterConfig()
    classifier = experts = fixed = None
    if args.expert:
        fixed = load_displacement_checkpoint(args.expert)
    elif not (args.oracle_displacement or args.no_update):
        if not (args.classifier and args.expert_human
                and args.expert_quadruped):
            raise MissingArtifact(
                "run needs --classifier/--expert-human/--expert-quadruped, "
                "or --expert, or --oracle-displacement, or --no-update")
        classifier = load_classifier_checkpoint(args.classifier)
        experts = {
            PlatformLabel.HUMAN:
                load_displacement_checkpoint(args.expert_human),
            PlatformLabel.QUADRUPED:
                load_displacement_checkpoint(args.expert_quadruped),
        }
    result = run_pipeline(imu, gt, cfg, classifier=classifier,
                          experts=experts, fixed_expert=fixed,
                          oracle=args.oracle_displacement,
                          no_update=args.no_update,
                          rte_window=args.rte_window)
    os.makedirs(args.out_dir, exist_ok=True)
    traj_path = os.path.join(args.out_dir, "estimate.csv")
    dataio.save_dataset(traj_path, imu, result.trajectory)
    write_routing_log(os.path.join(args.out_dir, "routing.csv"),
                      result.decisions)
    if result.report is not None:
        evalkit.write_report(result.report,
                             os.path.join(args.out_dir, "report.txt"),
                             os.path.join(args.out_dir, "report.csv"))
        evalkit.plot_topdown(os.path.join(args.out_dir, "trajectory.svg"),
                             result.trajectory, gt)
        for line in result.report.lines():
            print(line)
    print(f"wrote {traj_path} ({result.n_updates} updates)")
    return 0


def _cmd_evaluate(args) -> int:
    import os
    _, est = dataio.load_dataset(args.est)
    _, gt = dataio.load_dataset(args.gt)
    if est is None or gt is None:
        raise MalformedInput("both files need pose columns")
    report = evalkit.evaluate_pair(est, gt, rte_window=args.rte_window)
    os.makedirs(args.out_dir, exist_ok=True)
    evalkit.write_report(report, os.path.join(args.out_dir, "report.txt"),
                         os.path.join(args.out_dir, "report.csv"))
    for line in report.lines():
        print(line)
    return 0


def _cmd_plot(args) -> int:
    _, est = dataio.load_dataset(args.est)
    if est is None:
        raise MalformedInput(f"{args.est}: no pose columns to plot")
    gt = None
    if args.gt:
        _, gt = dataio.load_dataset(args.gt)
    evalkit.plot_topdown(args.out, est, gt)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xio", description="cross-platform inertial odometry pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset file")
    p.add_argument("--kind", default="circle", choices=simkit.KINDS)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--gait-freq", type=float, default=2.0)
    p.add_argument("--radius", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-g", type=float, default=0.0)
    p.add_argument("--sigma-a", type=float, default=0.0)
    p.add_argument("--sigma-bg", type=float, default=0.0)
    p.add_argument("--sigma-ba", type=float, default=0.0)
    p.add_argument("--bias-g", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.add_argument("--bias-a", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train an expert or the classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("classify", help="platform decisions per window")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window-len", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("run", help="full pipeline: filter + network fusion")
    p.add_argument("--input", required=True)
    p.add_argument("--filter-config")
    p.add_argument("--classifier")
    p.add_argument("--expert-human")
    p.add_argument("--expert-quadruped")
    p.add_argument("--expert", help="single expert; skips routing")
    p.add_argument("--oracle-displacement", action="store_true",
                   help="bypass the network with ground-truth displacements")
    p.add_argument("--no-update", action="store_true",
                   help="pure propagation (dead reckoning)")
    p.add_argument("--rte-window", type=float, default=60.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("evaluate", help="metrics for est vs. gt files")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--rte-window", type=float, default=60.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("plot", help="top-down SVG of a trajectory file")
    p.add_argument("--est", required=True)
    p.add_argument("--gt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (MalformedInput, XioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
