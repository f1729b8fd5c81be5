"""Optimization of every learnable parameter and the checkpoint format.

Checkpoint layout (little-endian)::

    b"GPG1"
    uint32  tensor count
    repeated:
        uint16  name length, name (utf-8)
        uint8   ndim, uint32 * ndim shape
        float64 * prod(shape) values

A JSON sidecar (``<path>.json``) holds the model/training configuration and
the per-epoch loss trace.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, NumericError
from .model import GPGraphModel

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GPG1"


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    batch: int = 1
    nll_weight: float = 1.0
    group_loss_weight: float = 0.0
    seed: int = 0
    freeze: tuple = ()  # parameter-name prefixes excluded from updates
    schedule: str = "constant"  # "constant" | "cosine" (decays to lr * min_lr_ratio)
    min_lr_ratio: float = 0.1

    def validate(self):
        if self.lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch < 1:
            raise ConfigurationError(f"batch must be >= 1, got {self.batch}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, epoch: int) -> float:
        if self.schedule == "constant" or self.epochs == 1:
            return self.lr
        floor = self.lr * self.min_lr_ratio
        return floor + 0.5 * (self.lr - floor) * (1 + math.cos(math.pi * epoch / (self.epochs - 1)))


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params: dict):
        for p in params.values():
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            if p.grad is None:
                continue
            m = self.m.get(name, 0.0) * self.beta1 + (1 - self.beta1) * p.grad
            v = self.v.get(name, 0.0) * self.beta2 + (1 - self.beta2) * p.grad**2
            self.m[name], self.v[name] = m, v
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg.lr) if cfg.optimizer == "adam" else SGD(cfg.lr)


def trainable(model: GPGraphModel, cfg: TrainConfig) -> dict:
    return {k: v for k, v in model.named_parameters().items() if not any(k.startswith(f) for f in cfg.freeze)}


def window_loss(model, window, cfg: TrainConfig, labels=None):
    result = model.forward(window, labels=labels, group_loss_weight=cfg.group_loss_weight)
    loss = nx.mul(cfg.nll_weight, result.nll)
    if result.group_loss is not None:
        loss = nx.add(loss, nx.mul(cfg.group_loss_weight, result.group_loss))
    return loss, result


def train_step(model: GPGraphModel, windows, optimizer, cfg: TrainConfig, labels=None) -> float:
    """One forward/backward/update over a batch of windows; returns the pre-update loss.

    A non-finite loss or gradient raises :class:`NumericError` and leaves the
    parameters untouched.
    """
    if not isinstance(windows, (list, tuple)):
        windows, labels = [windows], [labels]
    elif labels is None:
        labels = [None] * len(windows)
    params = trainable(model, cfg)
    for p in model.named_parameters().values():
        p.grad = None
    total = None
    for w, lab in zip(windows, labels):
        loss, _ = window_loss(model, w, cfg, lab)
        total = loss if total is None else nx.add(total, loss)
    total = nx.mul(total, 1.0 / len(windows))
    value = float(total.data)
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    total.backward()
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for {name}")
    optimizer.step(params)
    return value


@dataclass
class FitResult:
    trace: list = field(default_factory=list)
    steps: int = 0


def fit(model: GPGraphModel, windows, cfg: TrainConfig, labels=None, callback=None) -> FitResult:
    """Epoch loop with seeded shuffling; ``trace`` holds the mean loss of each epoch."""
    cfg.validate()
    windows = list(windows)
    if not windows:
        raise ConfigurationError("cannot fit on an empty dataset")
    if labels is not None and len(labels) != len(windows):
        raise ConfigurationError("labels must align with windows")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    result = FitResult()
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = rng.permutation(len(windows))
        losses = []
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            batch = [windows[i] for i in idx]
            batch_labels = None if labels is None else [labels[i] for i in idx]
            try:
                losses.append(train_step(model, batch, opt, cfg, batch_labels))
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {result.steps}: {exc}") from exc
            result.steps += 1
        result.trace.append(float(np.mean(losses)))
        logger.debug("epoch %d loss %.6f", epoch, result.trace[-1])
        if callback is not None:
            callback(epoch, result.trace[-1])
    return result


# -- checkpoints ---------------------------------------------------------------------


def dump_tensors(named: dict) -> bytes:
    out = [CHECKPOINT_MAGIC, struct.pack("<I", len(named))]
    for name, value in named.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def load_tensors(blob: bytes) -> dict:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    (count,) = struct.unpack_from("<I", blob, 4)
    offset, out = 8, {}
    for _ in range(count):
        (length,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + length].decode("utf-8")
        offset += length
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(shape).copy()
        offset += 8 * size
    return out


def save_checkpoint(path, model: GPGraphModel, model_config: dict, train_config: TrainConfig | None = None, trace=()):
    path = Path(path)
    named = dict(model.named_parameters())
    named["group.tau"] = np.float64(model.tau)
    path.write_bytes(dump_tensors(named))
    sidecar = {
        "model": model_config,
        "train": asdict(train_config) if train_config is not None else None,
        "loss_trace": [float(x) for x in trace],
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Return (model, sidecar dict)."""
    path = Path(path)
    tensors = load_tensors(path.read_bytes())
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    cfg = dict(sidecar["model"])
    cfg["tau"] = float(tensors.pop("group.tau"))
    model = GPGraphModel(**cfg)
    params = model.named_parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) ^ set(tensors))
        raise ValueError(f"checkpoint does not match the model: {missing}")
    for name, p in params.items():
        if p.data.shape != tensors[name].shape:
            raise ValueError(f"shape mismatch for {name}: {p.data.shape} vs {tensors[name].shape}")
        p.data = tensors[name]
    return model, sidecar
