"""Experiment orchestration: configs, Monte Carlo evaluation, sweeps and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from taskquant import baselines, hybrid, mimosim
from taskquant.hybrid import HybridNetwork, TrainConfig, TrainingDiverged
from taskquant.quantizer import lane_plan

log = logging.getLogger(__name__)

CSV_HEADER = ("sweep_var", "variant", "metric", "value", "stderr", "seed", "config_digest")
TASKS = ("channel-est", "detection")
MODE_VARIANTS = {"soft": "soft-to-hard", "passing": "passing-gradient", "uniform-soft": "uniform-soft-to-hard"}

# stream tags for derived generators
_CHANNEL, _TRAIN_DATA, _TEST_DATA, _INIT, _TRAIN, _CSI = range(6)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def derived_rng(seed: int, tag: int, *index: int) -> np.random.Generator:
    """Independent generator for one stream of one grid point."""
    return np.random.default_rng([seed, tag, *index])


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "detection"
    seed: int = 0
    # channel estimation
    n_users: int = 4
    n_antennas: int = 10
    pilots: int = 12
    snr: float = 4.0
    resolutions: tuple = (2, 4, 8, 16)
    # detection
    det_antennas: int = 12
    det_users: int = 4
    snr_db: tuple = (6.0, 8.0, 10.0, 12.0, 14.0)
    rates: tuple = (1.0, 2.0)
    normalize_channel: bool = True
    hidden: int = 32
    trials: int = 20000
    perturbation: float = 0.2
    perturbation_rule: str = "linear"
    # systems
    modes: tuple = ("soft", "passing", "uniform-soft")
    csi: str = "exact"
    snr_uncertainty: bool = False
    baselines: bool = True
    # training; unset values take task defaults
    train_size: int | None = None
    eval_size: int | None = None
    epochs: int | None = None
    batch_size: int = 128
    learning_rate: float | None = None
    anneal_factor: float | None = None
    slope_factor: float | None = None
    quantizer_lr_scale: float | None = None
    support: float = 2.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        est = self.task == "channel-est"
        defaults = {
            "train_size": 2 ** 15 if est else 5000,
            "eval_size": 2 ** 10,
            "epochs": 30 if est else 200,
            "learning_rate": 0.003 if est else 0.05,
            "anneal_factor": 1.1 if est else 1.0,
            "slope_factor": 1.0 if est else 4.0,
            "quantizer_lr_scale": 0.0125 if est else 1.0,
        }
        for key, value in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        for key in ("resolutions", "snr_db", "rates", "modes"):
            value = getattr(self, key)
            if isinstance(value, (str, int, float)):
                value = (value,)
            object.__setattr__(self, key, tuple(value))
            # an empty mode list means baselines only
            if not value and key != "modes":
                raise ConfigError(f"{key} must not be empty")
        for m in self.modes:
            if m not in MODE_VARIANTS:
                raise ConfigError(f"unknown training mode {m!r}")
        if self.csi not in ("exact", "perturbed"):
            raise ConfigError(f"csi must be exact or perturbed, got {self.csi!r}")
        if self.perturbation_rule not in ("linear", "squared"):
            raise ConfigError(f"unknown perturbation rule {self.perturbation_rule!r}")
        if any(m < 2 for m in self.resolutions):
            raise ConfigError("resolutions must be >= 2")
        if any(r <= 0 for r in self.rates):
            raise ConfigError("rates must be positive")
        for key in ("train_size", "eval_size", "epochs", "batch_size", "trials", "hidden"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.det_users > baselines.MAX_USERS:
            raise ConfigError(f"at most {baselines.MAX_USERS} users")

    def train_config(self, mode: str, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           mode=mode, anneal_factor=self.anneal_factor, seed=seed,
                           quantizer_lr_scale=self.quantizer_lr_scale)

    def canonical(self) -> str:
        """Stable ``key = value`` rendering of every field."""
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_render(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _render(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


_TUPLE_TYPES = {"resolutions": int, "snr_db": float, "rates": float, "modes": str}
_SCALAR_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(key: str, text: str):
    if key in _TUPLE_TYPES:
        kind = _TUPLE_TYPES[key]
        return tuple(kind(v.strip()) for v in text.split(",") if v.strip())
    kind = _SCALAR_TYPES[key]
    if "bool" in kind:
        return _parse_bool(text)
    if "int" in kind:
        return int(text)
    if "float" in kind:
        return float(text)
    return text


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _SCALAR_TYPES:
            raise ConfigError(f"line {number}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {number}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, value)
        except ValueError as exc:
            raise ConfigError(f"line {number}: {exc}") from None
    if base is None:
        return ExperimentConfig(**values)
    return base.replace(**values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


# -- evaluation ---------------------------------------------------------------

def evaluate_mse(predictor: HybridNetwork | Callable, data: mimosim.SampleSet) -> tuple[float, float]:
    """Per-component MSE and its Monte Carlo standard error."""
    if len(data) == 0:
        raise ValueError("empty test set")
    predict = predictor if callable(predictor) else (lambda x: hybrid.forward_deploy(predictor, x))
    per_sample = np.mean((data.s - predict(data.x)) ** 2, axis=1)
    return float(per_sample.mean()), _stderr(per_sample)


def evaluate_ber(detector: Callable, data: mimosim.SampleSet) -> tuple[float, float]:
    """Bit error rate of ``detector(x) -> s_hat`` with its Monte Carlo standard error."""
    if len(data) == 0:
        raise ValueError("need at least one trial")
    per_trial = np.mean(detector(data.x) != data.s, axis=1)
    return float(per_trial.mean()), _stderr(per_trial)


def _stderr(samples: np.ndarray) -> float:
    if samples.size < 2:
        return 0.0
    return float(samples.std(ddof=1) / math.sqrt(samples.size))


# -- results ------------------------------------------------------------------

@dataclass(frozen=True)
class Row:
    sweep_var: str
    variant: str
    metric: str
    value: float
    stderr: float
    order: tuple = field(default=(), compare=False)


@dataclass
class SweepResult:
    seed: int
    digest: str
    rows: list = field(default_factory=list)

    def add(self, sweep_var, variant, metric, value, stderr=0.0, order=()):
        self.rows.append(Row(sweep_var, variant, metric, float(value), float(stderr), tuple(order)))

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (r.order, r.sweep_var, r.variant, r.metric))

    def get(self, sweep_var: str, variant: str, metric: str) -> Row:
        for r in self.rows:
            if (r.sweep_var, r.variant, r.metric) == (sweep_var, variant, metric):
                return r
        raise KeyError((sweep_var, variant, metric))

    def variants(self) -> set:
        return {r.variant for r in self.rows}


def _fmt(v: float) -> str:
    return format(v, ".17g")


def emit_csv(result: SweepResult, path=None) -> str:
    """Write the result as CSV (to ``path`` if given) and return the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in result.sorted_rows():
        w.writerow((r.sweep_var, r.variant, r.metric, _fmt(r.value), _fmt(r.stderr), result.seed, result.digest))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(path_or_text) -> list[dict]:
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        r["value"] = float(r["value"])
        r["stderr"] = float(r["stderr"])
    return rows


# -- channel estimation -------------------------------------------------------

def channel_est_scenario(cfg: ExperimentConfig) -> mimosim.ChannelEstScenario:
    return mimosim.ChannelEstScenario(cfg.n_users, cfg.n_antennas, cfg.pilots, cfg.snr)


def channel_est_train_set(cfg: ExperimentConfig, index: int = 0,
                          snr_uncertainty: bool = False) -> mimosim.SampleSet:
    rng = derived_rng(cfg.seed, _TRAIN_DATA, index, int(snr_uncertainty))
    return mimosim.gen_channel_est(channel_est_scenario(cfg), cfg.train_size, rng,
                                   "uniform" if snr_uncertainty else "fixed")


def channel_est_test_set(cfg: ExperimentConfig) -> mimosim.SampleSet:
    """Evaluation set, always at the nominal SNR."""
    return mimosim.gen_channel_est(channel_est_scenario(cfg), cfg.eval_size, derived_rng(cfg.seed, _TEST_DATA))


def train_channel_est(cfg: ExperimentConfig, resolution: int, index: int = 0,
                      mode: str = "soft", snr_uncertainty: bool = False) -> hybrid.TrainResult:
    sc = channel_est_scenario(cfg)
    train = channel_est_train_set(cfg, index, snr_uncertainty)
    net = hybrid.build_estimation_network(sc.n, sc.n_s, sc.n_s, resolution, derived_rng(cfg.seed, _INIT, index),
                                          mode, cfg.slope_factor)
    train_seed = int(derived_rng(cfg.seed, _TRAIN, index).integers(2 ** 63))
    return hybrid.train(net, train.x, train.s, cfg.train_config(mode, train_seed))


def run_channel_est_sweep(cfg: ExperimentConfig) -> SweepResult:
    """MSE against the MMSE and rate-limited bounds for each quantizer resolution."""
    sc = channel_est_scenario(cfg)
    result = SweepResult(cfg.seed, cfg.digest())
    test = channel_est_test_set(cfg)
    mmse = baselines.mmse_bound(sc.snr, sc.pilots)
    for i, m in enumerate(cfg.resolutions):
        plan_rate = sc.n_s * math.log2(m) / sc.n
        var = f"M={m}"
        order = (m,)
        result.add(var, "bounds", "mmse", mmse, order=order)
        result.add(var, "bounds", "fundamental_limit",
                   baselines.fundamental_limit(sc.snr, sc.pilots, sc.rho, plan_rate), order=order)
        # one lane per target component, so nominal and effective rates coincide
        result.add(var, "lane-plan", "nominal_rate", plan_rate, order=order)
        result.add(var, "lane-plan", "effective_rate", plan_rate, order=order)
        result.add(var, "lane-plan", "lanes", sc.n_s, order=order)
        runs = [(mode, False) for mode in cfg.modes]
        if cfg.snr_uncertainty:
            runs += [(mode, True) for mode in cfg.modes]
        for mode, uncertain in runs:
            variant = MODE_VARIANTS[mode] + ("+snr-uncertainty" if uncertain else "")
            try:
                res = train_channel_est(cfg, m, i, mode, uncertain)
            except TrainingDiverged as exc:
                log.warning("%s diverged at %s: %s", variant, var, exc)
                result.add(var, variant, "diverged", 1.0, order=order)
                continue
            mse, se = evaluate_mse(res.network, test)
            result.add(var, variant, "mse", mse, se, order=order)
            result.add(var, variant, "final_train_loss", res.loss_history[-1], order=order)
    return result


# -- detection ----------------------------------------------------------------

def detection_channel(cfg: ExperimentConfig) -> np.ndarray:
    """The fixed channel matrix of an experiment, drawn from the master seed."""
    h = mimosim.random_channel(cfg.det_antennas, cfg.det_users, derived_rng(cfg.seed, _CHANNEL))
    return mimosim.normalize_columns(h) if cfg.normalize_channel else h


def detection_train_set(cfg: ExperimentConfig, scenario: mimosim.DetectionScenario, snr_index: int,
                        csi: str | None = None) -> mimosim.SampleSet:
    csi = cfg.csi if csi is None else csi
    rng = derived_rng(cfg.seed, _TRAIN_DATA, snr_index, int(csi == "perturbed"))
    if csi == "perturbed":
        # one channel error per minibatch-sized block
        return mimosim.gen_detection_blocks(scenario, cfg.train_size, rng, cfg.batch_size, "perturbed",
                                            cfg.perturbation_rule)
    return mimosim.gen_detection(scenario, cfg.train_size, rng)


def detection_test_set(cfg: ExperimentConfig, scenario: mimosim.DetectionScenario,
                       snr_index: int) -> mimosim.SampleSet:
    return mimosim.gen_detection(scenario, cfg.trials, derived_rng(cfg.seed, _TEST_DATA, snr_index))


def train_detector(cfg: ExperimentConfig, scenario: mimosim.DetectionScenario, rate: float, mode: str,
                   train: mimosim.SampleSet, index: tuple = (0, 0)) -> hybrid.TrainResult:
    plan = lane_plan(scenario.n, scenario.n_s, rate, "detection")
    net = hybrid.build_detection_network(scenario.n, 2 ** scenario.n_s, plan.lanes, plan.resolution,
                                         derived_rng(cfg.seed, _INIT, *index), mode, cfg.hidden,
                                         cfg.slope_factor)
    train_seed = int(derived_rng(cfg.seed, _TRAIN, *index).integers(2 ** 63))
    return hybrid.train(net, train.x, hybrid.symbols_to_index(train.s), cfg.train_config(mode, train_seed))


def _perturbed_map(cfg, scenario, test, snr_index):
    rng = derived_rng(cfg.seed, _CSI, snr_index)
    estimates = mimosim.perturb_channel(scenario.channel, rng, cfg.perturbation, cfg.perturbation_rule,
                                        size=len(test))
    return evaluate_ber(lambda x: baselines.map_detect_mismatched(x, estimates, scenario.sigma), test)


def run_detection_sweep(cfg: ExperimentConfig) -> SweepResult:
    """BER of learned and model-based detectors over the rate and SNR grids."""
    h = detection_channel(cfg)
    result = SweepResult(cfg.seed, cfg.digest())
    suffix = "+csi-perturbed" if cfg.csi == "perturbed" else ""
    for si, snr in enumerate(cfg.snr_db):
        scenario = mimosim.DetectionScenario.from_snr_db(h, snr)
        test = detection_test_set(cfg, scenario, si)
        train = detection_train_set(cfg, scenario, si) if cfg.modes else None
        map_ber = evaluate_ber(lambda x: baselines.map_detect(x, h, scenario.sigma), test) if cfg.baselines else None
        mismatched = _perturbed_map(cfg, scenario, test, si) if cfg.baselines else None
        for ri, rate in enumerate(cfg.rates):
            var = f"R={rate:g};snr_db={snr:g}"
            order = (rate, snr)
            plan = lane_plan(scenario.n, scenario.n_s, rate, "detection")
            result.add(var, "lane-plan", "lanes", plan.lanes, order=order)
            result.add(var, "lane-plan", "resolution", plan.resolution, order=order)
            result.add(var, "lane-plan", "nominal_rate", rate, order=order)
            result.add(var, "lane-plan", "effective_rate", plan.effective_rate, order=order)
            if cfg.baselines:
                result.add(var, "map", "ber", *map_ber, order=order)
                result.add(var, "map-perturbed-csi", "ber", *mismatched, order=order)
                qmap = evaluate_ber(lambda x: baselines.quantized_map_rate(
                    x, h, scenario.sigma, rate, (-cfg.support, cfg.support)), test)
                result.add(var, "quantized-map", "ber", *qmap, order=order)
            for mi, mode in enumerate(cfg.modes):
                variant = MODE_VARIANTS[mode] + suffix
                try:
                    res = train_detector(cfg, scenario, rate, mode, train, (ri, si))
                except TrainingDiverged as exc:
                    log.warning("%s diverged at %s: %s", variant, var, exc)
                    result.add(var, variant, "diverged", 1.0, order=order)
                    continue
                ber = evaluate_ber(lambda x: hybrid.classify(res.network, x), test)
                result.add(var, variant, "ber", *ber, order=order)
                result.add(var, variant, "final_train_loss", res.loss_history[-1], order=order)
    return result


def run_baselines(cfg: ExperimentConfig) -> SweepResult:
    """Bounds (channel estimation) or model-based detector curves only."""
    if cfg.task == "channel-est":
        return _channel_est_bounds(cfg)
    return run_detection_sweep(cfg.replace(modes=(), baselines=True))


def _channel_est_bounds(cfg: ExperimentConfig) -> SweepResult:
    sc = channel_est_scenario(cfg)
    result = SweepResult(cfg.seed, cfg.digest())
    for m in cfg.resolutions:
        rate = sc.n_s * math.log2(m) / sc.n
        result.add(f"M={m}", "bounds", "mmse", baselines.mmse_bound(sc.snr, sc.pilots), order=(m,))
        result.add(f"M={m}", "bounds", "fundamental_limit",
                   baselines.fundamental_limit(sc.snr, sc.pilots, sc.rho, rate), order=(m,))
    return result


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    if cfg.task == "channel-est":
        return run_channel_est_sweep(cfg)
    return run_detection_sweep(cfg)
