"""Plain-text checkpoints for hybrid networks.

Layout, one record per line::

    taskquant-checkpoint 1
    task <estimation|classification>
    bank <lanes> <soft|hard|passing> <trainable 0|1>
    amplitudes ... / shifts ... / slopes ...        (soft bank)
    thresholds ... / levels ...                     (hard or passing bank)
    analog <layer count>
    layer <out> <in> <activation>
    weights <row-major values>
    biases <values>
    digital <layer count>
    ...

Values are written with 17 significant digits so a round trip is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from taskquant.hybrid import HybridNetwork
from taskquant.netcore import DenseLayer
from taskquant.quantizer import HardQuantizer, QuantizerBank, SoftQuantizerParams

MAGIC = "taskquant-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or unsupported checkpoint."""


def _row(key: str, values) -> str:
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    return " ".join([key] + [format(v, ".17g") for v in vals])


def dumps(net: HybridNetwork) -> str:
    bank = net.bank
    lines = [f"{MAGIC} {VERSION}", f"task {net.task}",
             f"bank {bank.lanes} {bank.mode} {int(bank.trainable)}"]
    q = bank.quantizer
    if bank.mode == "soft":
        lines += [_row("amplitudes", q.amplitudes), _row("shifts", q.shifts), _row("slopes", q.slopes)]
    else:
        lines += [_row("thresholds", q.thresholds), _row("levels", q.levels)]
    for name, stack in (("analog", net.analog), ("digital", net.digital)):
        lines.append(f"{name} {len(stack)}")
        for layer in stack:
            lines.append(f"layer {layer.out_dim} {layer.in_dim} {layer.activation}")
            lines.append(_row("weights", layer.weights))
            lines.append(_row("biases", layer.biases))
    return "\n".join(lines) + "\n"


class _Reader:
    def __init__(self, text: str):
        self.lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        self.pos = 0

    def take(self, key: str) -> list[str]:
        if self.pos >= len(self.lines):
            raise CheckpointError(f"unexpected end of checkpoint, wanted {key!r}")
        fields = self.lines[self.pos]
        if fields[0] != key:
            raise CheckpointError(f"line {self.pos + 1}: expected {key!r}, found {fields[0]!r}")
        self.pos += 1
        return fields[1:]

    def values(self, key: str, count: int | None = None) -> np.ndarray:
        try:
            out = np.array([float(v) for v in self.take(key)])
        except ValueError as exc:
            raise CheckpointError(f"bad number in {key!r}: {exc}") from None
        if count is not None and out.size != count:
            raise CheckpointError(f"{key!r} has {out.size} values, expected {count}")
        return out


def _read_stack(r: _Reader, name: str) -> list[DenseLayer]:
    (count,) = r.take(name)
    layers = []
    for _ in range(int(count)):
        out_dim, in_dim, act = r.take("layer")
        out_dim, in_dim = int(out_dim), int(in_dim)
        w = r.values("weights", out_dim * in_dim).reshape(out_dim, in_dim)
        layers.append(DenseLayer(w, r.values("biases", out_dim), act))
    return layers


def loads(text: str) -> HybridNetwork:
    r = _Reader(text)
    if not r.lines or r.lines[0][0] != MAGIC:
        raise CheckpointError("not a taskquant checkpoint")
    (version,) = r.take(MAGIC)
    if int(version) != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (task,) = r.take("task")
    lanes, mode, trainable = r.take("bank")
    if mode == "soft":
        q = SoftQuantizerParams(r.values("amplitudes"), r.values("shifts"), r.values("slopes"))
    else:
        q = HardQuantizer(r.values("thresholds"), r.values("levels"))
    bank = QuantizerBank(int(lanes), q, mode, bool(int(trainable)))
    analog = _read_stack(r, "analog")
    digital = _read_stack(r, "digital")
    if r.pos != len(r.lines):
        raise CheckpointError("trailing data after checkpoint")
    return HybridNetwork(analog, bank, digital, task)


def save(net: HybridNetwork, path) -> None:
    Path(path).write_text(dumps(net))


def load(path) -> HybridNetwork:
    return loads(Path(path).read_text())
