"""Network building blocks: affine layers, a single-layer LSTM, and a stack of
dilated causal convolution blocks with residual connections.

Sizes follow the history-window-size (HWS) rules used throughout the project:
the recurrent backbone uses hidden = latent = HWS // 2, the convolutional one
hidden = latent = ceil(2 * log2(HWS)) with ceil(log2(HWS / 8)) layers (minimum
one) and kernel size 5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as te
from .tensor import RngStream, ShapeError, Tensor


def _uniform_init(rng: RngStream, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


@dataclass
class AffineLayer:
    """y = weight @ x + bias with weight [out, in] and bias [out]."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.rank != 2 or self.bias.rank != 1 \
                or self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(f"inconsistent affine shapes: weight {self.weight.shape}, "
                             f"bias {self.bias.shape}")

    @property
    def in_size(self) -> int:
        return self.weight.shape[1]

    @property
    def out_size(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def create(cls, in_size: int, out_size: int, rng: RngStream) -> "AffineLayer":
        return cls(weight=_uniform_init(rng, (out_size, in_size), in_size),
                   bias=_uniform_init(rng, (out_size,), in_size))


def affine_forward(layer: AffineLayer, x: Tensor) -> Tensor:
    """Apply the affine map to a vector [in] or a batch [m, in]."""
    if x.rank == 1:
        if x.shape[0] != layer.in_size:
            raise ShapeError(f"affine expects input size {layer.in_size}, got {x.shape}")
        y = te.bias_add(te.matmul(te.reshape(x, (1, layer.in_size)),
                                  te.transpose(layer.weight)), layer.bias)
        return te.reshape(y, (layer.out_size,))
    if x.rank == 2:
        if x.shape[1] != layer.in_size:
            raise ShapeError(f"affine expects input size {layer.in_size}, got {x.shape}")
        return te.bias_add(te.matmul(x, te.transpose(layer.weight)), layer.bias)
    raise ShapeError(f"affine input must be rank 1 or 2, got {x.shape}")


@dataclass
class LstmLayer:
    """Single-layer LSTM parameters.

    Gate order is input, forget, cell candidate, output:
        i = sigmoid(W_i x + U_i h + b_i)      f, o analogous
        g = tanh(W_g x + U_g h + b_g)
        c <- f * c + i * g ;   h <- o * tanh(c)
    State starts at zeros.
    """

    input_size: int
    hidden_size: int
    w_i: Tensor
    w_f: Tensor
    w_g: Tensor
    w_o: Tensor
    u_i: Tensor
    u_f: Tensor
    u_g: Tensor
    u_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_g: Tensor
    b_o: Tensor

    @classmethod
    def create(cls, input_size: int, hidden_size: int, rng: RngStream) -> "LstmLayer":
        fan = input_size + hidden_size
        def w():
            return _uniform_init(rng, (hidden_size, input_size), fan)
        def u():
            return _uniform_init(rng, (hidden_size, hidden_size), fan)
        def b():
            return _uniform_init(rng, (hidden_size,), fan)
        return cls(input_size, hidden_size,
                   w_i=w(), w_f=w(), w_g=w(), w_o=w(),
                   u_i=u(), u_f=u(), u_g=u(), u_o=u(),
                   b_i=b(), b_f=b(), b_g=b(), b_o=b())

    def parameters(self) -> dict[str, Tensor]:
        return {"w_i": self.w_i, "w_f": self.w_f, "w_g": self.w_g, "w_o": self.w_o,
                "u_i": self.u_i, "u_f": self.u_f, "u_g": self.u_g, "u_o": self.u_o,
                "b_i": self.b_i, "b_f": self.b_f, "b_g": self.b_g, "b_o": self.b_o}


class _PreparedLstm:
    """Gate weights stacked into [4H, in] / [4H, H] blocks for the fused cell.

    Built once per forward pass; the concat ops keep gradients flowing back
    to the individual gate parameters.
    """

    def __init__(self, layer: LstmLayer):
        self.hidden = layer.hidden_size
        self.w = te.concat([layer.w_i, layer.w_f, layer.w_g, layer.w_o], axis=0)
        self.u = te.concat([layer.u_i, layer.u_f, layer.u_g, layer.u_o], axis=0)
        self.b = te.concat([layer.b_i, layer.b_f, layer.b_g, layer.b_o], axis=0)

    def step(self, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        hh = self.hidden
        hc = te.lstm_cell(x_t, h, c, self.w, self.u, self.b)
        return te.slice_cols(hc, 0, hh), te.slice_cols(hc, hh, 2 * hh)


def lstm_forward_batched(layer: LstmLayer, steps: Sequence[Tensor],
                         collect_outputs: bool = False):
    """Run the LSTM over per-step inputs of shape [B, input_size].

    Returns (outputs, final_h) where outputs is a list of [B, hidden] tensors
    (empty unless requested).
    """
    if not steps:
        raise ShapeError("lstm requires a non-empty sequence")
    batch = steps[0].shape[0]
    prepared = _PreparedLstm(layer)
    h = Tensor(np.zeros((batch, layer.hidden_size)))
    c = Tensor(np.zeros((batch, layer.hidden_size)))
    outputs: list[Tensor] = []
    for x_t in steps:
        h, c = prepared.step(x_t, h, c)
        if collect_outputs:
            outputs.append(h)
    return outputs, h


def lstm_sequence(layer: LstmLayer, x: Tensor) -> tuple[Tensor, Tensor]:
    """Full per-step hidden states for a [T, input_size] sequence.

    Returns (outputs [T, hidden], final_h [hidden]); differentiable through
    all steps (backpropagation through time).
    """
    if x.rank != 2 or x.shape[1] != layer.input_size:
        raise ShapeError(f"lstm_sequence expects [T, {layer.input_size}], got {x.shape}")
    if x.shape[0] < 1:
        raise ShapeError("lstm_sequence requires T >= 1")
    steps = [te.reshape(te.select(x, t_idx, axis=0), (1, layer.input_size))
             for t_idx in range(x.shape[0])]
    outputs, final_h = lstm_forward_batched(layer, steps, collect_outputs=True)
    stacked = te.concat(outputs, axis=0)
    return stacked, te.reshape(final_h, (layer.hidden_size,))


@dataclass
class TcnBlock:
    """One dilated causal convolution layer with a residual connection."""

    kernel_size: int
    dilation: int
    in_channels: int
    out_channels: int
    weight: Tensor  # [K, Cin, Cout]
    bias: Tensor    # [Cout]
    proj: Tensor | None = None  # [Cin, Cout] 1x1 projection when Cin != Cout

    @classmethod
    def create(cls, kernel_size: int, dilation: int, in_channels: int,
               out_channels: int, rng: RngStream) -> "TcnBlock":
        fan = kernel_size * in_channels
        weight = _uniform_init(rng, (kernel_size, in_channels, out_channels), fan)
        bias = _uniform_init(rng, (out_channels,), fan)
        proj = None
        if in_channels != out_channels:
            proj = _uniform_init(rng, (in_channels, out_channels), in_channels)
        return cls(kernel_size, dilation, in_channels, out_channels, weight, bias, proj)

    def parameters(self) -> dict[str, Tensor]:
        params = {"weight": self.weight, "bias": self.bias}
        if self.proj is not None:
            params["proj"] = self.proj
        return params


def build_tcn_stack(num_layers: int, channels: int, kernel_size: int,
                    rng: RngStream, in_channels: int = 1) -> list[TcnBlock]:
    """Stack of blocks with dilation doubling per layer (1, 2, 4, ...)."""
    blocks = []
    cin = in_channels
    for layer_idx in range(num_layers):
        blocks.append(TcnBlock.create(kernel_size, 2 ** layer_idx, cin, channels, rng))
        cin = channels
    return blocks


def tcn_forward_batched(blocks: Sequence[TcnBlock], x: Tensor) -> tuple[Tensor, Tensor]:
    """Run the block stack over [B, T, Cin]; returns (outputs [B, T, C], final [B, C]).

    Each block computes conv(x) + residual, with a 1x1 projection on the
    residual path when channel counts differ; ReLU is applied between blocks
    (not after the last one).
    """
    if x.rank != 3:
        raise ShapeError(f"tcn expects [B, T, C] input, got {x.shape}")
    if x.shape[1] < 1:
        raise ShapeError("tcn requires T >= 1")
    h = x
    for idx, blk in enumerate(blocks):
        y = te.causal_conv1d(h, blk.weight, blk.bias, blk.dilation)
        res = h if blk.proj is None else te.channels_matmul(h, blk.proj)
        h = te.add(y, res)
        if idx < len(blocks) - 1:
            h = te.relu(h)
    final = te.select(h, h.shape[1] - 1, axis=1)
    return h, final


def tcn_forward(blocks: Sequence[TcnBlock], x: Tensor) -> tuple[Tensor, Tensor]:
    """Unbatched wrapper: [T, 1] input -> (outputs [T, C], final [C])."""
    if x.rank != 2 or x.shape[1] != 1:
        raise ShapeError(f"tcn_forward expects [T, 1], got {x.shape}")
    steps = x.shape[0]
    out3, final2 = tcn_forward_batched(blocks, te.reshape(x, (1, steps, 1)))
    channels = out3.shape[2]
    return te.reshape(out3, (steps, channels)), te.reshape(final2, (channels,))


def receptive_field(kernel_size: int, num_layers: int) -> int:
    return 1 + (kernel_size - 1) * (2 ** num_layers - 1)


@dataclass(frozen=True)
class BackboneConfig:
    """Backbone family plus the sizes derived from the history window."""

    kind: str  # 'rnn' | 'tcn'
    history_size: int
    hidden_size: int
    latent_size: int
    num_layers: int = 0   # tcn only
    kernel_size: int = 5  # tcn only

    def __post_init__(self):
        if self.kind not in ("rnn", "tcn"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.hidden_size < 1 or self.latent_size < 1:
            raise ValueError("backbone sizes must be positive")
        if self.kind == "tcn" and self.num_layers < 1:
            raise ValueError("tcn needs at least one layer")

    @classmethod
    def for_history(cls, kind: str, history_size: int) -> "BackboneConfig":
        if history_size < 2:
            raise ValueError("history_size must be at least 2")
        if kind == "rnn":
            hidden = history_size // 2
            return cls(kind="rnn", history_size=history_size,
                       hidden_size=hidden, latent_size=hidden)
        if kind == "tcn":
            hidden = math.ceil(2.0 * math.log2(history_size))
            layers = max(1, math.ceil(math.log2(history_size / 8)))
            return cls(kind="tcn", history_size=history_size,
                       hidden_size=hidden, latent_size=hidden,
                       num_layers=layers, kernel_size=5)
        raise ValueError(f"unknown backbone kind {kind!r}")
