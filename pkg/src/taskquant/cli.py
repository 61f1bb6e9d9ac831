"""Command-line entry point: ``taskquant {gen,train,eval,sweep,baseline}``."""

from __future__ import annotations

import argparse
import logging
import sys

from taskquant import checkpoint, harness, hybrid, mimosim
from taskquant.harness import ConfigError, ExperimentConfig, SweepResult
from taskquant.hybrid import TrainingDiverged

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("taskquant")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value experiment file")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides the config)")
    common.add_argument("--out", metavar="PATH", help="output file (stdout if omitted, except for train)")
    common.add_argument("--mode", choices=sorted(harness.MODE_VARIANTS), help="train only this system")
    common.add_argument("--csi", choices=("exact", "perturbed"), help="channel knowledge during training")
    common.add_argument("--snr-uncertainty", action="store_true", help="train with P drawn from U[1, 10]")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="taskquant", description="Task-based quantization experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write a training set as CSV")
    sub.add_parser("train", parents=[common], help="train one model and save a checkpoint")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", metavar="PATH", required=True)
    sub.add_parser("sweep", parents=[common], help="full sweep to CSV")
    sub.add_parser("baseline", parents=[common], help="bounds and model-based detectors only")
    return p


def _config(args) -> ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.mode:
        changes["modes"] = (args.mode,)
    if args.csi:
        changes["csi"] = args.csi
    if args.snr_uncertainty:
        changes["snr_uncertainty"] = True
    return cfg.replace(**changes) if changes else cfg


def _emit_text(text: str, out) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _first_point(cfg: ExperimentConfig):
    """Scenario of the first grid point and its index tuple."""
    if cfg.task == "channel-est":
        return harness.channel_est_scenario(cfg), (0,)
    h = harness.detection_channel(cfg)
    return mimosim.DetectionScenario.from_snr_db(h, cfg.snr_db[0]), (0, 0)


def cmd_gen(cfg: ExperimentConfig, args) -> None:
    sc, _ = _first_point(cfg)
    if cfg.task == "channel-est":
        data = harness.channel_est_train_set(cfg, 0, cfg.snr_uncertainty)
    else:
        data = harness.detection_train_set(cfg, sc, 0)
    mimosim.write_dataset_csv(data, args.out or sys.stdout)


def _train(cfg: ExperimentConfig) -> hybrid.TrainResult:
    mode = cfg.modes[0] if cfg.modes else "soft"
    sc, index = _first_point(cfg)
    if cfg.task == "channel-est":
        return harness.train_channel_est(cfg, cfg.resolutions[0], 0, mode, cfg.snr_uncertainty)
    train = harness.detection_train_set(cfg, sc, 0)
    return harness.train_detector(cfg, sc, cfg.rates[0], mode, train, index)


def cmd_train(cfg: ExperimentConfig, args) -> None:
    if not args.out:
        raise ConfigError("train needs --out for the checkpoint")
    res = _train(cfg)
    checkpoint.save(res.network, args.out)
    log.info("final training loss %.6g", res.loss_history[-1])


def cmd_eval(cfg: ExperimentConfig, args) -> None:
    try:
        net = checkpoint.load(args.checkpoint)
    except checkpoint.CheckpointError as exc:
        raise ConfigError(f"bad checkpoint: {exc}") from None
    sc, _ = _first_point(cfg)
    result = SweepResult(cfg.seed, cfg.digest())
    if cfg.task == "channel-est":
        if net.task != "estimation" or net.input_dim != sc.n:
            raise ConfigError("checkpoint does not match the channel-estimation scenario")
        test = harness.channel_est_test_set(cfg)
        result.add("checkpoint", "model", "mse", *harness.evaluate_mse(net, test))
    else:
        if net.task != "classification" or net.input_dim != sc.n:
            raise ConfigError("checkpoint does not match the detection scenario")
        test = harness.detection_test_set(cfg, sc, 0)
        result.add(f"snr_db={cfg.snr_db[0]:g}", "model", "ber",
                   *harness.evaluate_ber(lambda x: hybrid.classify(net, x), test))
    _emit_text(harness.emit_csv(result), args.out)


def cmd_sweep(cfg: ExperimentConfig, args) -> None:
    result = harness.run_sweep(cfg)
    _emit_text(harness.emit_csv(result), args.out)
    failed = [r for r in result.rows if r.metric == "diverged"]
    if failed:
        # the CSV keeps the failure rows; the exit code still reports them
        raise TrainingDiverged(f"{len(failed)} grid point(s) diverged: "
                               + ", ".join(f"{r.sweep_var} {r.variant}" for r in failed))


def cmd_baseline(cfg: ExperimentConfig, args) -> None:
    _emit_text(harness.emit_csv(harness.run_baselines(cfg)), args.out)


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "baseline": cmd_baseline}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
