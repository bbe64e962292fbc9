"""RMSProp training loop with validation-based early stopping, training-log
records, and a binary checkpoint format that round-trips bit-exactly.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data import NormalizationStats, SplitDataset, WindowedDataset
from .model import CvaeForecaster, ModelConfig, batched_training_objective
from .tensor import RngStream, ShapeError, Tape, Tensor


class TrainingError(RuntimeError):
    """Raised when optimization hits a non-recoverable state (non-finite loss)."""


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt, or incompatible checkpoint files."""


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 100_000
    patience_steps: int = 5_000
    batch_size: int = 32
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-8
    eval_every: int = 100
    val_num_samples: int = 100
    clip_norm: float | None = None  # global gradient norm cap; None disables
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.patience_steps < self.eval_every:
            raise ValueError("patience_steps must be >= eval_every")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must be in [0, 1)")


@dataclass
class OptimizerState:
    """Per-parameter running mean-square accumulators."""

    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "OptimizerState":
        return cls(v={name: np.zeros(p.shape) for name, p in params.items()})


def rmsprop_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
                 state: OptimizerState, config: TrainConfig) -> None:
    """v <- rho v + (1 - rho) g^2 ; p <- p - lr * g / (sqrt(v) + eps), in place."""
    rho = config.rmsprop_decay
    lr = config.learning_rate
    eps = config.rmsprop_epsilon
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, "
                             f"expected {p.shape}")
        v = state.v[name]
        v *= rho
        v += (1.0 - rho) * g * g
        p.values -= lr * g / (np.sqrt(v) + eps)
    state.step += 1


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = total ** 0.5
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for name, g in grads.items():
            grads[name] = g * scale


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray
    histories: np.ndarray
    targets: np.ndarray


def make_batches(dataset: WindowedDataset, batch_size: int,
                 rng: RngStream) -> Iterator[Batch]:
    """Endless stream of uniformly-with-replacement sampled batches."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot sample batches from an empty dataset")
    while True:
        idx = rng.integers(0, n, (batch_size,))
        yield Batch(indices=idx, histories=dataset.histories[idx],
                    targets=dataset.targets[idx])


@dataclass
class TrainLogRecord:
    step: int
    loss: float
    kl: float
    crps: float
    val_crps: float | None
    ms_per_step: float


LOG_HEADER = "step,loss,kl,crps,val_crps,ms_per_step"


def write_log_csv(records: list[TrainLogRecord], path) -> None:
    lines = [LOG_HEADER]
    for r in records:
        val = "" if r.val_crps is None else repr(r.val_crps)
        lines.append(f"{r.step},{r.loss!r},{r.kl!r},{r.crps!r},{val},{r.ms_per_step!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    """Best-model snapshot plus everything needed to rebuild and denormalize."""

    backbone: str
    history_size: int
    horizon: int
    latent_size: int
    hidden_size: int
    num_layers: int
    kernel_size: int
    sample_size: int
    kl_weight: float
    train_mean: float
    train_std: float
    params: dict[str, np.ndarray]
    best_val_crps: float
    step: int
    version: int = 1

    @property
    def model_id(self) -> str:
        return f"{self.backbone}-hws{self.history_size}"

    @property
    def stats(self) -> NormalizationStats:
        return NormalizationStats(mean=self.train_mean, std=self.train_std)

    def model_config(self) -> ModelConfig:
        return ModelConfig(backbone=self.backbone, history_size=self.history_size,
                           hidden_size=self.hidden_size, latent_size=self.latent_size,
                           sample_size=self.sample_size, kl_weight=self.kl_weight,
                           num_layers=self.num_layers, kernel_size=self.kernel_size)

    def to_model(self) -> CvaeForecaster:
        model = CvaeForecaster(self.model_config(), RngStream(0))
        try:
            model.load_parameter_values(self.params)
        except (ValueError, ShapeError) as exc:
            raise CheckpointError(f"checkpoint parameters do not match the "
                                  f"declared architecture: {exc}") from exc
        return model


CHECKPOINT_MAGIC = b"VAEN"
CHECKPOINT_VERSION = 1


def _metadata_items(ckpt: Checkpoint) -> list[tuple[str, str]]:
    return [("backbone", ckpt.backbone),
            ("history_size", str(ckpt.history_size)),
            ("horizon", str(ckpt.horizon)),
            ("latent_size", str(ckpt.latent_size)),
            ("hidden_size", str(ckpt.hidden_size)),
            ("num_layers", str(ckpt.num_layers)),
            ("kernel_size", str(ckpt.kernel_size)),
            ("sample_size", str(ckpt.sample_size)),
            ("kl_weight", float(ckpt.kl_weight).hex()),
            ("train_mean", float(ckpt.train_mean).hex()),
            ("train_std", float(ckpt.train_std).hex()),
            ("best_val_crps", float(ckpt.best_val_crps).hex()),
            ("step", str(ckpt.step))]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Layout: magic 'VAEN', version byte, length-prefixed UTF-8 metadata
    key/value pairs, then per-parameter records (name, rank, extents,
    little-endian float64 buffer). Bit-exact by construction."""
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<B", CHECKPOINT_VERSION)
    meta = _metadata_items(ckpt)
    out += struct.pack("<I", len(meta))
    for key, value in meta:
        for text in (key, value):
            raw = text.encode("utf-8")
            out += struct.pack("<I", len(raw)) + raw
    out += struct.pack("<I", len(ckpt.params))
    for name, arr in ckpt.params.items():
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim)
        for extent in arr.shape:
            out += struct.pack("<I", extent)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint file is truncated or corrupt")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = reader.u8()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = {}
    for _ in range(reader.u32()):
        key = reader.text()
        meta[key] = reader.text()
    params: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.text()
        rank = reader.u32()
        shape = tuple(reader.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        buf = reader.take(count * 8)
        params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    if reader.pos != len(reader.blob):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    try:
        ckpt = Checkpoint(backbone=meta["backbone"],
                          history_size=int(meta["history_size"]),
                          horizon=int(meta["horizon"]),
                          latent_size=int(meta["latent_size"]),
                          hidden_size=int(meta["hidden_size"]),
                          num_layers=int(meta["num_layers"]),
                          kernel_size=int(meta["kernel_size"]),
                          sample_size=int(meta["sample_size"]),
                          kl_weight=float.fromhex(meta["kl_weight"]),
                          train_mean=float.fromhex(meta["train_mean"]),
                          train_std=float.fromhex(meta["train_std"]),
                          params=params,
                          best_val_crps=float.fromhex(meta["best_val_crps"]),
                          step=int(meta["step"]),
                          version=version)
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing metadata field {exc}") from exc
    ckpt.to_model()  # validates parameter names and shapes
    return ckpt


# ---------------------------------------------------------------------------
# validation scoring and the training loop


def _sorted_spread_term(sorted_cols: np.ndarray) -> np.ndarray:
    """(1/n^2) sum_i (2i - n - 1) x_(i) per column of pre-sorted samples."""
    n = sorted_cols.shape[0]
    coef = (2.0 * np.arange(1, n + 1) - n - 1.0)
    return coef @ sorted_cols / (n * n)


def validation_crps(model: CvaeForecaster, validation: WindowedDataset,
                    stats: NormalizationStats, num_samples: int,
                    rng: RngStream) -> float:
    """Mean one-step-ahead sample CRPS over the validation windows, in
    original units. Latents come from the prior, as at inference time."""
    n = len(validation)
    cond = model.condition_batch(Tensor(validation.histories))
    cols = np.empty((num_samples, n))
    for s in range(num_samples):
        z = Tensor(rng.normal((n, model.config.latent_size)))
        cols[s] = model.decode_from(cond, z).values
    cols.sort(axis=0)
    term1 = np.abs(cols - validation.targets[None, :]).mean(axis=0)
    crps_norm = term1 - _sorted_spread_term(cols)
    return float(crps_norm.mean() * stats.std)


@dataclass
class _BestSnapshot:
    params: dict[str, np.ndarray]
    val_crps: float
    step: int


def train(model_config: ModelConfig, split: SplitDataset,
          config: TrainConfig) -> tuple[Checkpoint, list[TrainLogRecord]]:
    """Optimize until max_steps or until validation CRPS stops improving for
    patience_steps; returns the checkpoint of the best validation model."""
    if len(split.train) == 0:
        raise ValueError("training split is empty")
    if len(split.validation) == 0:
        raise ValueError("validation split is empty")

    init_rng = RngStream(config.seed, stream=1)
    batch_rng = RngStream(config.seed, stream=2)
    noise_rng = RngStream(config.seed, stream=3)

    model = CvaeForecaster(model_config, init_rng)
    params = model.named_parameters()
    state = OptimizerState.for_params(params)
    batches = make_batches(split.train, config.batch_size, batch_rng)

    records: list[TrainLogRecord] = []
    best: _BestSnapshot | None = None

    for step in range(1, config.max_steps + 1):
        t0 = time.perf_counter()
        batch = next(batches)
        with Tape() as tape:
            loss, kl_val, crps_val = batched_training_objective(
                model, batch.histories, batch.targets, noise_rng)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingError(f"non-finite loss {loss_val} at step {step} "
                                    f"(kl={kl_val}, crps={crps_val})")
            gm = tape.backward(loss)
        grads = {name: gm.get(p) for name, p in params.items()}
        grads = {name: (np.zeros(params[name].shape) if g is None else g)
                 for name, g in grads.items()}
        if config.clip_norm is not None:
            clip_gradients(grads, config.clip_norm)
        rmsprop_step(params, grads, state, config)

        val_crps = None
        if step % config.eval_every == 0 or step == config.max_steps:
            # The validation stream restarts every evaluation so consecutive
            # scores share their noise (paired comparisons).
            val_crps = validation_crps(model, split.validation, split.stats,
                                       config.val_num_samples,
                                       RngStream(config.seed, stream=4))
            if best is None or val_crps < best.val_crps:
                best = _BestSnapshot(
                    params={n: p.values.copy() for n, p in params.items()},
                    val_crps=val_crps, step=step)

        ms = (time.perf_counter() - t0) * 1000.0
        records.append(TrainLogRecord(step=step, loss=loss_val, kl=kl_val,
                                      crps=crps_val, val_crps=val_crps,
                                      ms_per_step=ms))
        if best is not None and step - best.step >= config.patience_steps:
            break

    assert best is not None
    ckpt = Checkpoint(backbone=model_config.backbone,
                      history_size=model_config.history_size,
                      horizon=split.horizon,
                      latent_size=model_config.latent_size,
                      hidden_size=model_config.hidden_size,
                      num_layers=model_config.num_layers,
                      kernel_size=model_config.kernel_size,
                      sample_size=model_config.sample_size,
                      kl_weight=model_config.kl_weight,
                      train_mean=split.stats.mean,
                      train_std=split.stats.std,
                      params=best.params,
                      best_val_crps=best.val_crps,
                      step=best.step)
    return ckpt, records
