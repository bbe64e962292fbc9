"""Conditional-VAE forecaster and its KL + sampled-CRPS training objective.

The encoder sees the history window with the target appended, maps the final
backbone state through two parallel affine heads to (mu, log-variance), and
latent samples are drawn with the reparameterization z = mu + exp(logvar/2) * eps.
The decoder maps the history window alone to its representation, concatenates
the latent sample, and a single affine layer produces the next-step forecast.

The reconstruction term is a sampled CRPS: with S forecasts f and target y,

    loss = mean_i |f_i - y| - 0.5 * mean_i |f_i - f_{pi(i)}|

where pi is a random cyclic rotation by k in {1..S-1}, so no forecast is ever
paired with itself. With S = 1 the spread term vanishes and the loss is plain
MAE. The total objective is kl_weight * KL + CRPS, both averaged per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as te
from .layers import (AffineLayer, BackboneConfig, LstmLayer, TcnBlock,
                     affine_forward, build_tcn_stack, lstm_forward_batched,
                     tcn_forward_batched)
from .tensor import RngStream, ShapeError, Tensor

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass(frozen=True)
class ModelConfig:
    backbone: str
    history_size: int
    hidden_size: int
    latent_size: int
    sample_size: int = 8
    kl_weight: float = 1.0
    num_layers: int = 0   # tcn only
    kernel_size: int = 5  # tcn only

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.history_size < 8:
            raise ValueError("history_size must be >= 8")

    @classmethod
    def create(cls, backbone: str, history_size: int, sample_size: int = 8,
               kl_weight: float = 1.0) -> "ModelConfig":
        bb = BackboneConfig.for_history(backbone, history_size)
        return cls(backbone=bb.kind, history_size=bb.history_size,
                   hidden_size=bb.hidden_size, latent_size=bb.latent_size,
                   sample_size=sample_size, kl_weight=kl_weight,
                   num_layers=bb.num_layers, kernel_size=bb.kernel_size)


@dataclass
class EncoderOutput:
    mu: Tensor
    logvar: Tensor  # clamped to [LOGVAR_MIN, LOGVAR_MAX]


@dataclass
class LatentSample:
    z: Tensor
    source: str  # 'recognition' | 'prior'


class CvaeForecaster:
    """Parameter container plus batched forward passes for both backbones."""

    def __init__(self, config: ModelConfig, rng: RngStream):
        self.config = config
        if config.backbone == "rnn":
            self.enc_lstm = LstmLayer.create(1, config.hidden_size, rng)
            self.dec_lstm = LstmLayer.create(1, config.hidden_size, rng)
            self.enc_tcn: list[TcnBlock] = []
            self.dec_tcn: list[TcnBlock] = []
        else:
            self.enc_lstm = None
            self.dec_lstm = None
            self.enc_tcn = build_tcn_stack(config.num_layers, config.hidden_size,
                                           config.kernel_size, rng)
            self.dec_tcn = build_tcn_stack(config.num_layers, config.hidden_size,
                                           config.kernel_size, rng)
        self.mu_head = AffineLayer.create(config.hidden_size, config.latent_size, rng)
        self.logvar_head = AffineLayer.create(config.hidden_size, config.latent_size, rng)
        self.out_head = AffineLayer.create(config.hidden_size + config.latent_size, 1, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        if self.config.backbone == "rnn":
            for name, p in self.enc_lstm.parameters().items():
                params[f"enc.lstm.{name}"] = p
            for name, p in self.dec_lstm.parameters().items():
                params[f"dec.lstm.{name}"] = p
        else:
            for i, blk in enumerate(self.enc_tcn):
                for name, p in blk.parameters().items():
                    params[f"enc.tcn{i}.{name}"] = p
            for i, blk in enumerate(self.dec_tcn):
                for name, p in blk.parameters().items():
                    params[f"dec.tcn{i}.{name}"] = p
        params["head.mu.weight"] = self.mu_head.weight
        params["head.mu.bias"] = self.mu_head.bias
        params["head.logvar.weight"] = self.logvar_head.weight
        params["head.logvar.bias"] = self.logvar_head.bias
        params["head.out.weight"] = self.out_head.weight
        params["head.out.bias"] = self.out_head.bias
        return params

    def load_parameter_values(self, values: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) ^ set(values)
        if missing:
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} != {p.shape}")
            p.values[...] = arr

    # -- backbone passes -----------------------------------------------------

    def _run_backbone(self, encoder: bool, seq: Tensor) -> Tensor:
        """Final hidden state [B, hidden] of a [B, T] input sequence."""
        if self.config.backbone == "rnn":
            layer = self.enc_lstm if encoder else self.dec_lstm
            steps = [te.reshape(te.slice_cols(seq, t_idx, t_idx + 1), (seq.shape[0], 1))
                     for t_idx in range(seq.shape[1])]
            _, final = lstm_forward_batched(layer, steps)
            return final
        blocks = self.enc_tcn if encoder else self.dec_tcn
        x3 = te.reshape(seq, (seq.shape[0], seq.shape[1], 1))
        _, final = tcn_forward_batched(blocks, x3)
        return final

    def encode_batch(self, seq: Tensor) -> EncoderOutput:
        """Recognition pass over [B, HWS+1] sequences (history plus target)."""
        if seq.shape[1] != self.config.history_size + 1:
            raise ShapeError(f"encoder expects sequences of length "
                             f"{self.config.history_size + 1}, got {seq.shape}")
        final = self._run_backbone(encoder=True, seq=seq)
        mu = affine_forward(self.mu_head, final)
        logvar = te.clip(affine_forward(self.logvar_head, final), LOGVAR_MIN, LOGVAR_MAX)
        return EncoderOutput(mu=mu, logvar=logvar)

    def condition_batch(self, histories: Tensor) -> Tensor:
        """Decoder-side representation [B, hidden] of [B, HWS] histories."""
        if histories.shape[1] != self.config.history_size:
            raise ShapeError(f"decoder expects histories of length "
                             f"{self.config.history_size}, got {histories.shape}")
        return self._run_backbone(encoder=False, seq=histories)

    def decode_from(self, condition: Tensor, z: Tensor) -> Tensor:
        """Forecasts [B] from condition representations [B, H] and latents [B, L]."""
        joint = te.concat([condition, z], axis=1)
        out = affine_forward(self.out_head, joint)
        return te.reshape(out, (out.shape[0],))


# ---------------------------------------------------------------------------
# single-window operations


def _check_history(model: CvaeForecaster, history: Tensor) -> None:
    if history.rank != 1 or history.shape[0] != model.config.history_size:
        raise ShapeError(f"history must have length {model.config.history_size}, "
                         f"got shape {history.shape}")


def encode(model: CvaeForecaster, history: Tensor, target) -> EncoderOutput:
    """Recognition distribution q(z | history, target) for one window."""
    _check_history(model, history)
    target_t = target if isinstance(target, Tensor) else Tensor(float(target))
    seq = te.concat([history, te.reshape(target_t, (1,))], axis=0)
    enc = model.encode_batch(te.reshape(seq, (1, seq.shape[0])))
    latent = model.config.latent_size
    return EncoderOutput(mu=te.reshape(enc.mu, (latent,)),
                         logvar=te.reshape(enc.logvar, (latent,)))


def reparameterize_with(enc: EncoderOutput, eps: Tensor) -> LatentSample:
    std = te.exp(te.mul(enc.logvar, Tensor(0.5)))
    z = te.add(enc.mu, te.mul(std, eps))
    return LatentSample(z=z, source="recognition")


def reparameterize(enc: EncoderOutput, rng: RngStream) -> LatentSample:
    """z = mu + exp(logvar/2) * eps with eps ~ N(0, I); differentiable in mu, logvar."""
    eps = te.standard_normal(rng, enc.mu.shape)
    return reparameterize_with(enc, eps)


def decode(model: CvaeForecaster, history: Tensor, z: LatentSample | Tensor) -> Tensor:
    """Deterministic scalar forecast for one (history, z) pair."""
    _check_history(model, history)
    z_t = z.z if isinstance(z, LatentSample) else z
    if z_t.rank != 1 or z_t.shape[0] != model.config.latent_size:
        raise ShapeError(f"latent must have length {model.config.latent_size}, "
                         f"got shape {z_t.shape}")
    cond = model.condition_batch(te.reshape(history, (1, history.shape[0])))
    out = model.decode_from(cond, te.reshape(z_t, (1, z_t.shape[0])))
    return te.reshape(out, ())


def kl_divergence(enc: EncoderOutput) -> Tensor:
    """KL(q || N(0, I)) = -0.5 * sum(1 + logvar - mu^2 - exp(logvar)); >= 0."""
    mu, logvar = enc.mu, enc.logvar
    inner = te.sub(te.add(Tensor(1.0), logvar),
                   te.add(te.mul(mu, mu), te.exp(logvar)))
    axis = None if inner.rank == 1 else 1
    return te.mul(te.reduce_sum(inner, axis=axis), Tensor(-0.5))


def crps_training_loss(forecasts: Tensor, target, rng: RngStream) -> Tensor:
    """Single-rotation CRPS estimate of S forecasts against a scalar target."""
    if forecasts.rank != 1 or forecasts.shape[0] < 1:
        raise ShapeError(f"forecasts must be a non-empty vector, got {forecasts.shape}")
    sample_size = forecasts.shape[0]
    target_t = target if isinstance(target, Tensor) else Tensor(float(target))
    term1 = te.reduce_mean(te.absolute(te.sub(forecasts, target_t)))
    if sample_size == 1:
        return term1
    k = int(rng.integers(1, sample_size))
    rotated = te.roll(forecasts, -k)
    term2 = te.reduce_mean(te.absolute(te.sub(forecasts, rotated)))
    return te.sub(term1, te.mul(term2, Tensor(0.5)))


def training_objective(model: CvaeForecaster, history: Tensor, target,
                       rng: RngStream) -> tuple[Tensor, dict[str, float]]:
    """Total loss kl_weight * KL + CRPS for one training window.

    Draw order: S reparameterization noise vectors, then the rotation offset.
    With a re-seeded stream the objective is fully deterministic.
    """
    cfg = model.config
    enc = encode(model, history, target)
    cond = model.condition_batch(te.reshape(history, (1, cfg.history_size)))
    forecasts = []
    for _ in range(cfg.sample_size):
        z = reparameterize(enc, rng)
        f = model.decode_from(cond, te.reshape(z.z, (1, cfg.latent_size)))
        forecasts.append(f)
    fvec = te.concat(forecasts, axis=0)
    kl = kl_divergence(enc)
    crps = crps_training_loss(fvec, target, rng)
    loss = te.add(te.mul(kl, Tensor(cfg.kl_weight)), crps)
    return loss, {"kl": kl.item(), "crps": crps.item()}


# ---------------------------------------------------------------------------
# batched objective used by the training loop


def batched_training_objective(model: CvaeForecaster, histories: np.ndarray,
                               targets: np.ndarray, rng: RngStream
                               ) -> tuple[Tensor, float, float]:
    """KL + CRPS averaged over a batch of (history, target) windows.

    Draw order per step: S noise matrices [B, latent], then B rotation
    offsets. Returns (loss, kl_value, crps_value).
    """
    cfg = model.config
    batch = histories.shape[0]
    seq = Tensor(np.concatenate([histories, targets[:, None]], axis=1))
    enc = model.encode_batch(seq)
    cond = model.condition_batch(Tensor(histories))

    cols = []
    for _ in range(cfg.sample_size):
        eps = te.standard_normal(rng, (batch, cfg.latent_size))
        z = reparameterize_with(enc, eps).z
        cols.append(te.reshape(model.decode_from(cond, z), (batch, 1)))
    fmat = te.concat(cols, axis=1) if len(cols) > 1 else cols[0]

    target_mat = Tensor(np.repeat(targets[:, None], cfg.sample_size, axis=1))
    term1 = te.reduce_mean(te.absolute(te.sub(fmat, target_mat)))
    if cfg.sample_size > 1:
        shifts = rng.integers(1, cfg.sample_size, (batch,))
        idx = (np.arange(cfg.sample_size)[None, :] + shifts[:, None]) % cfg.sample_size
        rotated = te.take_columns(fmat, idx)
        term2 = te.reduce_mean(te.absolute(te.sub(fmat, rotated)))
        crps = te.sub(term1, te.mul(term2, Tensor(0.5)))
    else:
        crps = term1
    kl = te.reduce_mean(kl_divergence(enc))
    loss = te.add(te.mul(kl, Tensor(cfg.kl_weight)), crps)
    return loss, kl.item(), crps.item()
