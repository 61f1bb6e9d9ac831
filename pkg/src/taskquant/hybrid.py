"""Analog network -> scalar quantizer bank -> digital network.

The only path from the analog stack to the digital stack runs through the
quantizer bank, one lane per analog output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from taskquant import netcore
from taskquant.netcore import DenseLayer
from taskquant.quantizer import (
    QuantizerBank,
    SoftQuantizerParams,
    anneal,
    dither_noise,
    hard_apply,
    harden,
    init_soft_params,
    soft_quantize,
    soft_quantize_backward,
    uniform_quantizer,
)

log = logging.getLogger(__name__)

TASKS = ("estimation", "classification")
TRAIN_MODES = ("soft", "passing", "uniform-soft")


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite during training."""


@dataclass(frozen=True)
class HybridNetwork:
    analog: tuple
    bank: QuantizerBank
    digital: tuple
    task: str = "estimation"

    def __post_init__(self):
        object.__setattr__(self, "analog", tuple(self.analog))
        object.__setattr__(self, "digital", tuple(self.digital))
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.analog or not self.digital:
            raise ValueError("both analog and digital stacks need at least one layer")
        netcore.check_chain(self.analog)
        netcore.check_chain(self.digital)
        # the bank is the only bridge: analog width == lanes == digital width
        if self.analog[-1].out_dim != self.bank.lanes:
            raise ValueError(f"analog stack emits {self.analog[-1].out_dim} values for {self.bank.lanes} lanes")
        if self.digital[0].in_dim != self.bank.lanes:
            raise ValueError(f"digital stack expects {self.digital[0].in_dim} inputs from {self.bank.lanes} lanes")
        if any(layer.activation == "softmax" for layer in self.analog):
            raise ValueError("softmax is not allowed in the analog stack")
        final = self.digital[-1].activation
        if self.task == "classification" and final != "softmax":
            raise ValueError("classification head must end in softmax")
        if self.task == "estimation" and final == "softmax":
            raise ValueError("estimation head cannot end in softmax")

    @property
    def input_dim(self) -> int:
        return self.analog[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.digital[-1].out_dim

    def with_bank(self, bank: QuantizerBank) -> "HybridNetwork":
        return replace(self, bank=bank)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.01
    mode: str = "soft"
    anneal_factor: float = 1.0
    co_scale: bool = True
    seed: int = 0
    # step-size multiplier for the shared quantizer parameters, whose
    # gradients accumulate over every lane
    quantizer_lr_scale: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.anneal_factor < 1:
            raise ValueError("anneal_factor must be >= 1")
        if self.quantizer_lr_scale < 0:
            raise ValueError("quantizer_lr_scale must be >= 0")


@dataclass
class HybridTrace:
    analog: netcore.Trace
    z: np.ndarray
    quantized: np.ndarray
    digital: netcore.Trace

    @property
    def output(self) -> np.ndarray:
        return self.digital.output


@dataclass
class HybridGradients:
    analog: list
    amplitudes: np.ndarray
    shifts: np.ndarray
    digital: list
    inputs: np.ndarray = field(repr=False, default=None)


def make_bank(lanes: int, resolution: int, mode: str, support=(-2.0, 2.0),
              slope_factor: float = 8.0) -> QuantizerBank:
    """Initial bank for a training mode (``soft``, ``passing`` or ``uniform-soft``)."""
    if mode == "passing":
        return QuantizerBank(lanes, uniform_quantizer(support[0], support[1], resolution), "passing")
    params = init_soft_params(resolution, support, slope_factor)
    return QuantizerBank(lanes, params, "soft", trainable=(mode != "uniform-soft"))


def build_estimation_network(n: int, n_s: int, lanes: int, resolution: int,
                             rng: np.random.Generator, mode: str = "soft",
                             slope_factor: float = 8.0) -> HybridNetwork:
    """One linear analog layer and one linear digital layer."""
    return HybridNetwork(
        analog=[netcore.dense_layer(n, lanes, rng)],
        bank=make_bank(lanes, resolution, mode, slope_factor=slope_factor),
        digital=[netcore.dense_layer(lanes, n_s, rng)],
        task="estimation",
    )


def build_detection_network(n: int, classes: int, lanes: int, resolution: int,
                            rng: np.random.Generator, mode: str = "soft",
                            hidden: int = 32, slope_factor: float = 8.0) -> HybridNetwork:
    """Two analog layers (tanh hidden) and two digital layers ending in softmax."""
    return HybridNetwork(
        analog=[netcore.dense_layer(n, hidden, rng, "tanh"),
                netcore.dense_layer(hidden, lanes, rng)],
        bank=make_bank(lanes, resolution, mode, slope_factor=slope_factor),
        digital=[netcore.dense_layer(lanes, hidden, rng, "tanh"),
                 netcore.dense_layer(hidden, classes, rng, "softmax")],
        task="classification",
    )


def forward_train(net: HybridNetwork, x, rng: np.random.Generator | None = None) -> tuple[np.ndarray, HybridTrace]:
    """Training-time forward pass.

    Soft banks apply the tanh-sum activation; passing-gradient banks add
    uniform dither (drawn from ``rng``) and are treated as identity by the
    backward pass.
    """
    bank = net.bank
    if bank.mode == "hard":
        raise ValueError("bank is hardened; use forward_deploy")
    a_trace = netcore.forward(net.analog, x)
    z = a_trace.post[-1]
    if bank.mode == "soft":
        q = soft_quantize(z, bank.quantizer)
    else:
        if rng is None:
            raise ValueError("passing-gradient mode needs an rng for the dither")
        q = z + dither_noise(bank.quantizer, rng, z.shape)
    d_trace = netcore.forward(net.digital, q)
    d_trace.squeeze = a_trace.squeeze
    trace = HybridTrace(a_trace, z, q, d_trace)
    return trace.output, trace


def backward_train(net: HybridNetwork, trace: HybridTrace, output_gradient) -> HybridGradients:
    d_grads = netcore.backward(net.digital, trace.digital, output_gradient)
    g_q = d_grads.inputs
    bank = net.bank
    k = bank.resolution - 1
    if bank.mode == "soft":
        g_z, g_a, g_b = soft_quantize_backward(trace.z, g_q, bank.quantizer)
        if not bank.trainable:
            g_a, g_b = np.zeros(k), np.zeros(k)
    else:
        g_z, g_a, g_b = g_q, np.zeros(k), np.zeros(k)
    a_grads = netcore.backward(net.analog, trace.analog, g_z)
    return HybridGradients(a_grads.layers, g_a, g_b, d_grads.layers, a_grads.inputs)


def forward_deploy(net: HybridNetwork, x) -> np.ndarray:
    """Inference with a true quantizer in the bank."""
    bank = net.bank
    if bank.mode == "soft":
        raise ValueError("bank is still soft; harden it before deployment")
    a_trace = netcore.forward(net.analog, x)
    q = hard_apply(bank.quantizer, a_trace.post[-1])
    out = netcore.forward(net.digital, q).post[-1]
    return out[0] if a_trace.squeeze else out


def harden_network(net: HybridNetwork) -> HybridNetwork:
    """Freeze the bank: soft activations become their hardened quantizer,
    passing-gradient banks keep their uniform quantizer."""
    bank = net.bank
    if bank.mode == "soft":
        return net.with_bank(QuantizerBank(bank.lanes, harden(bank.quantizer), "hard", trainable=False))
    if bank.mode == "passing":
        return net.with_bank(QuantizerBank(bank.lanes, bank.quantizer, "hard", trainable=False))
    return net


def _loss(net: HybridNetwork, output, targets):
    if net.task == "estimation":
        return netcore.mse_loss(output, targets)
    return netcore.cross_entropy_loss(output, targets)


def training_loss(net: HybridNetwork, x, targets, rng=None) -> float:
    out, _ = forward_train(net, x, rng)
    return _loss(net, out, targets)[0]


def _parameters(net: HybridNetwork) -> list:
    params = netcore.layer_params(net.analog) + netcore.layer_params(net.digital)
    if net.bank.mode == "soft":
        params += [net.bank.quantizer.amplitudes, net.bank.quantizer.shifts]
    return params


def _gradients(net: HybridNetwork, grads: HybridGradients) -> list:
    flat = [g for pair in grads.analog for g in pair] + [g for pair in grads.digital for g in pair]
    if net.bank.mode == "soft":
        flat += [grads.amplitudes, grads.shifts]
    return flat


def _rebuild(net: HybridNetwork, params: list) -> HybridNetwork:
    na, nd = 2 * len(net.analog), 2 * len(net.digital)
    analog = netcore.with_params(net.analog, params[:na])
    digital = netcore.with_params(net.digital, params[na:na + nd])
    bank = net.bank
    if bank.mode == "soft":
        q = bank.quantizer
        bank = replace(bank, quantizer=SoftQuantizerParams(params[na + nd], params[na + nd + 1], q.slopes))
    return HybridNetwork(analog, bank, digital, net.task)


@dataclass
class TrainResult:
    network: HybridNetwork
    loss_history: list
    soft_network: HybridNetwork | None = None


def train(net: HybridNetwork, x, targets, config: TrainConfig) -> TrainResult:
    """Minibatch SGD over ``(x, targets)``, then harden the bank.

    ``targets`` are real vectors for estimation and class indices for
    classification. The history holds the sample-weighted mean minibatch loss
    of each epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets)
    count = x.shape[0]
    if count == 0:
        raise ValueError("empty training set")
    if targets.shape[0] != count:
        raise ValueError("inputs and targets differ in length")
    if net.task == "classification" and targets.ndim != 1:
        raise ValueError("classification targets must be class indices")
    if net.task == "estimation" and targets.ndim != 2:
        raise ValueError("estimation targets must be vectors")
    if net.bank.mode == "hard":
        raise ValueError("cannot train a hardened bank")

    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        if epoch > 0 and net.bank.mode == "soft" and config.anneal_factor > 1:
            net = net.with_bank(replace(net.bank, quantizer=anneal(
                net.bank.quantizer, 1, config.anneal_factor, config.co_scale)))
        order = rng.permutation(count)
        total = 0.0
        for start in range(0, count, config.batch_size):
            idx = order[start:start + config.batch_size]
            out, trace = forward_train(net, x[idx], rng)
            loss, g_out = _loss(net, out, targets[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {start}")
            grads = backward_train(net, trace, g_out)
            params, flat = _parameters(net), _gradients(net, grads)
            nl = 2 * (len(net.analog) + len(net.digital))
            params = (netcore.sgd_step(params[:nl], flat[:nl], config.learning_rate)
                      + netcore.sgd_step(params[nl:], flat[nl:],
                                         config.learning_rate * config.quantizer_lr_scale))
            net = _rebuild(net, params)
            total += loss * idx.size
        history.append(total / count)
        if not np.isfinite(history[-1]):
            raise TrainingDiverged(f"non-finite loss after epoch {epoch}")
        log.debug("epoch %d loss %.6g", epoch, history[-1])
    return TrainResult(harden_network(net), history, soft_network=net)


def index_to_symbols(index, n_s: int) -> np.ndarray:
    """BPSK vector for a class index: bit ``k`` of the index sets user ``k`` (0 -> -1, 1 -> +1)."""
    idx = np.asarray(index)
    bits = (idx[..., None] >> np.arange(n_s)) & 1
    return 2.0 * bits - 1.0


def symbols_to_index(symbols) -> np.ndarray:
    s = np.asarray(symbols)
    bits = (s > 0).astype(np.int64)
    return (bits << np.arange(s.shape[-1])).sum(axis=-1)


def all_symbol_vectors(n_s: int) -> np.ndarray:
    """Every BPSK vector, row ``k`` being class ``k``."""
    return index_to_symbols(np.arange(2 ** n_s), n_s)


def classify(net: HybridNetwork, x) -> np.ndarray:
    """Most probable symbol vector; ties go to the lowest class index."""
    if net.task != "classification":
        raise ValueError("classify needs a classification head")
    probs = forward_deploy(net, x)
    n_s = int(round(np.log2(net.output_dim)))
    return index_to_symbols(np.argmax(probs, axis=-1), n_s)


def decode_probabilities(probs, n_s: int) -> np.ndarray:
    return index_to_symbols(np.argmax(np.asarray(probs), axis=-1), n_s)
