"""Mini-batch training with Adam, validation-F1 model selection, checkpoints."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import struct
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, AdamState, Tape, ops
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    IncompatibleVersionError,
    NumericError,
)
from .model import Batch, ModelConfig, training_samples

logger = logging.getLogger(__name__)

MAGIC = b"QBM1"
FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 20
    seed: int = 0
    patience: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_acc: float
    val_p: float
    val_r: float
    val_f1: float
    seconds: float

    def line(self):
        return (f"{self.epoch}\t{self.loss:.6f}\t{self.train_acc:.4f}\t{self.val_p:.4f}"
                f"\t{self.val_r:.4f}\t{self.val_f1:.4f}\t{self.seconds:.2f}")


@dataclass
class TrainResult:
    best_epoch: int
    best_f1: float
    history: list = field(default_factory=list)
    state: AdamState = None


def precision_recall_f1(y_true, p1, threshold=0.5):
    """Positive-class precision, recall and F1 with prediction ``p1 >= threshold``."""
    y_true = np.asarray(y_true).astype(bool)
    pred = np.asarray(p1) >= threshold
    tp = int(np.sum(pred & y_true))
    fp = int(np.sum(pred & ~y_true))
    fn = int(np.sum(~pred & y_true))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def validate_f1(network, X, y, qq_pool="max"):
    return precision_recall_f1(y, network.predict_proba(X, qq_pool=qq_pool)[:, 1])


def subset(batch: Batch, idx):
    pick = lambda a: None if a is None else a[idx]  # noqa: E731
    return Batch(batch.q_ids[idx], batch.q_mask[idx], batch.b_ids[idx], batch.b_mask[idx],
                 batch.slot_mask[idx], pick(batch.br_ids), pick(batch.br_mask))


def train(network, X, y, X_valid=None, y_valid=None, config: TrainConfig = None,
          log_file=None, qq_pool="max"):
    """Fit ``network`` in place and leave it holding the best-validation parameters.

    Without a validation set the training samples double as one.
    """
    config = config or TrainConfig()
    samples, labels = training_samples(network.config, X, y)
    if len(samples) == 0:
        raise ConfigurationError("training set is empty")
    if X_valid is None:
        X_valid, y_valid = X, y
    if len(X_valid) == 0:
        raise ConfigurationError("validation set is empty")
    full = network.encode(samples)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    opt = Adam(network.param_list, lr=config.lr)
    names = list(network.params)

    result = TrainResult(best_epoch=0, best_f1=-1.0)
    best_params = None
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(samples))
        total, correct = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            batch = subset(full, idx)
            with Tape() as tape:
                logits = network.logits(batch, training=True, rng=dropout_rng)
                loss = ops.cross_entropy(logits, labels[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            opt.zero_grad()
            tape.backward(loss)
            opt.step()
            total += value * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == labels[idx]))
        p, r, f1 = validate_f1(network, X_valid, y_valid, qq_pool=qq_pool)
        entry = EpochLog(epoch, total / len(samples), correct / len(samples), p, r, f1,
                         time.perf_counter() - t0)
        result.history.append(entry)
        if log_file is not None:
            log_file.write(entry.line() + "\n")
            log_file.flush()
        logger.info("seed=%d epoch %s", config.seed, entry.line())
        if f1 > result.best_f1:
            result.best_f1, result.best_epoch = f1, epoch
            best_params = {k: v.data.copy() for k, v in network.params.items()}
            result.state = copy.deepcopy(opt.state)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    for name in names:
        network.params[name].data[...] = best_params[name]
    return result


# --------------------------------------------------------------------------
# checkpoint files
#
# layout: MAGIC | u64 header length | JSON header | float32 LE arrays | u64 checksum


@dataclass
class Checkpoint:
    config: ModelConfig
    vocabulary: list
    params: dict
    adam: AdamState = None
    epoch: int = 0
    val_f1: float = 0.0
    seed: int = 0
    term_stats: dict = None
    stopwords: list = None
    extra: dict = field(default_factory=dict)


def _checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def checkpoint_bytes(cp: Checkpoint, version=FORMAT_VERSION) -> bytes:
    arrays = [(name, np.asarray(a)) for name, a in cp.params.items()]
    adam = None
    if cp.adam is not None:
        names = list(cp.params)
        arrays += [(f"adam.m.{n}", m) for n, m in zip(names, cp.adam.m)]
        arrays += [(f"adam.v.{n}", v) for n, v in zip(names, cp.adam.v)]
        adam = {"t": cp.adam.t, "lr": cp.adam.lr, "beta1": cp.adam.beta1,
                "beta2": cp.adam.beta2, "epsilon": cp.adam.epsilon}
    header = {
        "version": version,
        "config": cp.config.to_dict(),
        "vocabulary": list(cp.vocabulary),
        "seed": int(cp.seed),
        "epoch": int(cp.epoch),
        "val_f1": float(cp.val_f1),
        "term_stats": cp.term_stats,
        "stopwords": sorted(cp.stopwords) if cp.stopwords is not None else None,
        "adam": adam,
        "extra": cp.extra,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    head = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(head)), head]
    parts += [np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in arrays]
    body = b"".join(parts)
    return body + struct.pack("<Q", _checksum(body))


def save_checkpoint(path, cp: Checkpoint):
    """Write atomically: a temp file in the same directory, then rename."""
    data = checkpoint_bytes(cp)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".qbm-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def parse_checkpoint(data: bytes, source="checkpoint") -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError(f"{source}: bad magic bytes {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 20:
        raise CheckpointError(f"{source}: truncated ({len(data)} bytes)")
    body, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    if _checksum(body) != stored:
        raise CheckpointError(f"{source}: checksum mismatch (file truncated or corrupted)")
    (hlen,) = struct.unpack("<Q", body[4:12])
    try:
        header = json.loads(body[12:12 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{source}: unreadable header: {exc}") from None
    if header.get("version") != FORMAT_VERSION:
        raise IncompatibleVersionError(
            f"{source}: format version {header.get('version')} is not supported (expected {FORMAT_VERSION})")
    offset = 12 + hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(body):
            raise CheckpointError(f"{source}: array {spec['name']} runs past the end of the file")
        arrays[spec["name"]] = np.frombuffer(body[offset:end], dtype="<f4").astype(np.float32).reshape(shape)
        offset = end
    if offset != len(body):
        raise CheckpointError(f"{source}: {len(body) - offset} unexpected trailing bytes")
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    adam = None
    if header["adam"] is not None:
        a = header["adam"]
        adam = AdamState(m=[arrays[f"adam.m.{n}"].copy() for n in params],
                         v=[arrays[f"adam.v.{n}"].copy() for n in params],
                         t=a["t"], lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], epsilon=a["epsilon"])
    return Checkpoint(
        config=ModelConfig(**header["config"]),
        vocabulary=header["vocabulary"],
        params={k: v.copy() for k, v in params.items()},
        adam=adam,
        epoch=header["epoch"],
        val_f1=header["val_f1"],
        seed=header["seed"],
        term_stats=header["term_stats"],
        stopwords=header["stopwords"],
        extra=header["extra"],
    )


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return parse_checkpoint(data, source=str(path))
