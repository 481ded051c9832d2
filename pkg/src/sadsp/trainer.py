"""Alternating min-max training loop, learning-rate groups, checkpoints.

Each batch runs two phases. The adversary phase forwards, backwards the
adversary total, and steps ONLY the denoisers and discriminators (at their
own, much larger, learning rate). The generator phase then re-forwards so
it sees the freshly updated adversaries, backwards the generator total,
and steps everything else. The disentangled classifiers f_ds/f_do receive
gradients in both phases but are stepped only in the generator phase.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field

from . import ndkit as nd
from .data import Dataset, epoch_seed, minibatches
from .errors import CheckpointError, ContractError, TrainingDivergence
from .losses import (ADVERSARY_PHASE, GENERATOR_PHASE, LossReport, loss_total)
from .model import ModelParams, batch_tensors, forward
from .ndkit import Adam

END_TO_END = "end_to_end"
FIXED_TRUNK = "fixed_trunk"
REGIMES = (END_TO_END, FIXED_TRUNK)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 2   # small default: the low lrs need many steps per epoch to train
    seed: int = 0
    lr_trunk: float = 5.0e-6
    lr_adversary: float = 1.0e-2
    lr_other: float = 5.0e-5
    weight_decay: float = 5.0e-5
    adversary_steps_per_batch: int = 1
    regime: str = END_TO_END

    def validate(self) -> None:
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("lr_trunk", "lr_adversary", "lr_other"):
            if getattr(self, name) <= 0.0:
                raise ContractError(f"{name} must be > 0")
        if self.weight_decay < 0.0:
            raise ContractError("weight_decay must be >= 0")
        if self.adversary_steps_per_batch < 1:
            raise ContractError("adversary_steps_per_batch must be >= 1")
        if self.regime not in REGIMES:
            raise ContractError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")


@dataclass
class EpochStats:
    epoch: int
    generator: LossReport
    adversary: LossReport
    seconds: float


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)
    checkpoint_path: str = ""


@dataclass
class PhaseOptimizers:
    adversary: Adam
    trunk: Adam
    other: Adam

    @classmethod
    def create(cls, params: ModelParams, cfg: TrainConfig) -> "PhaseOptimizers":
        adv = (params.group_parameters("denoisers") +
               params.group_parameters("discriminators"))
        other = (params.group_parameters("sp") +
                 params.group_parameters("attention") +
                 params.group_parameters("generators") +
                 params.group_parameters("disentangled"))
        return cls(
            adversary=Adam(adv, lr=cfg.lr_adversary, weight_decay=cfg.weight_decay),
            trunk=Adam(params.group_parameters("trunk"), lr=cfg.lr_trunk,
                       weight_decay=cfg.weight_decay),
            other=Adam(other, lr=cfg.lr_other, weight_decay=cfg.weight_decay),
        )


def _check_finite(report: LossReport, epoch: int, batch: int) -> None:
    for name, value in report.components().items():
        if not math.isfinite(value):
            raise TrainingDivergence(epoch, batch, detail=f"{name}={value!r}")


def adversary_step(params: ModelParams, opts: PhaseOptimizers, x, s_true, o_true,
                   epoch: int = 0, batch: int = 0) -> LossReport:
    """Forward, backward the adversary total, step denoisers+discriminators."""
    params.zero_grads()
    bundle = forward(params, x)
    report, total = loss_total(bundle, s_true, o_true, ADVERSARY_PHASE)
    _check_finite(report, epoch, batch)
    nd.backward(total)
    opts.adversary.step()
    return report


def generator_step(params: ModelParams, opts: PhaseOptimizers, x, s_true, o_true,
                   regime: str = END_TO_END, epoch: int = 0, batch: int = 0) -> LossReport:
    """Fresh forward against updated adversaries, step everything else."""
    params.zero_grads()
    bundle = forward(params, x)
    report, total = loss_total(bundle, s_true, o_true, GENERATOR_PHASE)
    _check_finite(report, epoch, batch)
    nd.backward(total)
    if regime == END_TO_END:
        opts.trunk.step()
    opts.other.step()
    return report


def _mean_report(reports) -> LossReport:
    n = len(reports)
    sums = {k: 0.0 for k in reports[0].components()}
    for r in reports:
        for k, v in r.components().items():
            sums[k] += v
    return LossReport(**{k: v / n for k, v in sums.items()})


def train(params: ModelParams, dataset: Dataset, cfg: TrainConfig):
    """Run the alternating schedule; returns (params, TrainLog)."""
    cfg.validate()
    train_split = dataset.train
    if not train_split:
        raise ContractError("dataset has an empty train split")
    opts = PhaseOptimizers.create(params, cfg)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        gen_reports, adv_reports = [], []
        batches = minibatches(train_split, cfg.batch_size, epoch_seed(cfg.seed, epoch))
        for bi, batch in enumerate(batches):
            x, s_true, o_true = batch_tensors(batch)
            for _ in range(cfg.adversary_steps_per_batch):
                adv_reports.append(
                    adversary_step(params, opts, x, s_true, o_true, epoch, bi))
            gen_reports.append(
                generator_step(params, opts, x, s_true, o_true, cfg.regime, epoch, bi))
        log.entries.append(EpochStats(
            epoch=epoch,
            generator=_mean_report(gen_reports),
            adversary=_mean_report(adv_reports),
            seconds=time.perf_counter() - t0,
        ))
    return params, log


_LOG_COLUMNS = ("l_sp", "l_att", "l_dc", "l_den_max", "l_den_min",
                "l_dis_max", "l_dis_min", "l_total")


def write_train_log(path: str, log: TrainLog) -> None:
    """One CSV row per epoch: generator-phase loss means, then wall seconds."""
    with open(path, "w", newline="") as f:
        f.write("epoch," + ",".join(_LOG_COLUMNS) + ",adv_total,seconds\n")
        for e in log.entries:
            comps = e.generator.components()
            row = [str(e.epoch)]
            row.extend(repr(comps[c]) for c in _LOG_COLUMNS)
            row.append(repr(e.adversary.l_total))
            row.append(f"{e.seconds:.3f}")
            f.write(",".join(row) + "\n")


# -------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"SADSPCK1"
_CK_HEADER = struct.Struct("<IIII")
_U32 = struct.Struct("<I")


def save_checkpoint(params: ModelParams, path: str) -> None:
    chunks = [CHECKPOINT_MAGIC,
              _CK_HEADER.pack(params.num_states, params.num_objects,
                              params.feature_dim, params.hidden)]
    named = params.named_parameters()
    chunks.append(_U32.pack(len(named)))
    for name, t in named:
        raw = name.encode()
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
        chunks.append(_U32.pack(len(t.shape)))
        for dim in t.shape:
            chunks.append(_U32.pack(dim))
        chunks.append(struct.pack(f"<{t.size}d", *t.values))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


class _Reader:
    def __init__(self, path: str):
        try:
            with open(path, "rb") as f:
                self.buf = f.read()
        except OSError as e:
            raise CheckpointError(f"cannot read checkpoint {path!r}: {e}") from e
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint: expected {self.pos + n} bytes, have {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path: str) -> ModelParams:
    r = _Reader(path)
    if r.take(8) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path!r}")
    num_states, num_objects, feature_dim, hidden = _CK_HEADER.unpack(r.take(16))
    params = ModelParams.create(num_states, num_objects, feature_dim, hidden, seed=0)
    expected = params.named_parameters()
    count = r.u32()
    if count != len(expected):
        raise CheckpointError(f"checkpoint has {count} tensors, expected {len(expected)}")
    for want_name, t in expected:
        name = r.take(r.u32()).decode()
        if name != want_name:
            raise CheckpointError(f"tensor {name!r} out of order, expected {want_name!r}")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        if dims != t.shape:
            raise CheckpointError(f"tensor {name!r} has shape {dims}, expected {t.shape}")
        vals = struct.unpack(f"<{t.size}d", r.take(8 * t.size))
        for i, v in enumerate(vals):
            t.values[i] = v
    if r.pos != len(r.buf):
        raise CheckpointError(
            f"checkpoint has {len(r.buf) - r.pos} trailing bytes after {r.pos}")
    return params
