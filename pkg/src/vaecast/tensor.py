"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

The engine is define-by-run: operations executed while a :class:`Tape` is
active are appended to the tape's node list, and :func:`backward` replays the
list in reverse to accumulate gradients. Outside of a tape, every operation is
a plain numpy computation with no recording overhead, which is what inference
paths use.

Randomness comes from :class:`RngStream`, a counter-based (Philox) generator
with explicit stream objects, so there is no hidden global RNG state.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "GradientMap",
    "RngStream",
    "ShapeError",
    "elementwise",
    "activations",
    "reduce",
    "add",
    "sub",
    "mul",
    "neg",
    "absolute",
    "exp",
    "log",
    "softplus",
    "sigmoid",
    "tanh",
    "relu",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "reduce_sum",
    "reduce_mean",
    "bias_add",
    "clip",
    "select",
    "slice_cols",
    "roll",
    "take_columns",
    "channels_matmul",
    "causal_conv1d",
    "lstm_cell",
    "backward",
    "standard_normal",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


_STATE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


class Tensor:
    """A dense, row-major, double-precision array value.

    Tensors are value-like: operations never mutate their inputs. The only
    sanctioned in-place mutation of ``values`` is an optimizer update of a
    leaf parameter, after the backward pass of the step has completed.
    """

    __slots__ = ("values", "requires_grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def rank(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; scalars are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis: int | None = None):
        return reduce_sum(self, axis)

    def mean(self, axis: int | None = None):
        return reduce_mean(self, axis)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of operations for one forward pass.

    Because nodes are appended in execution order, every node's inputs precede
    it, and iterating the records in reverse is a valid topological order for
    the backward sweep. A tape is entered as a context manager; only one tape
    may be active per thread at a time.
    """

    __slots__ = ("_records", "_next_id", "gradients")

    def __init__(self):
        self._records: list[tuple[int, Callable[[np.ndarray], None]]] = []
        self._next_id = 0
        self.gradients: dict[int, np.ndarray] = {}

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active in this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False

    def __len__(self) -> int:
        return len(self._records)

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def bind(self, t: Tensor) -> int | None:
        """Return the tape node id for ``t``, registering leaves on first use."""
        if t._tape is self:
            return t.node_id
        if t.requires_grad:
            t._tape = self
            t.node_id = self._new_id()
            return t.node_id
        return None

    def _accum(self, nid: int, g: np.ndarray) -> None:
        cur = self.gradients.get(nid)
        self.gradients[nid] = g if cur is None else cur + g

    def backward(self, root: Tensor) -> "GradientMap":
        if root._tape is not self or root.node_id is None:
            raise ValueError("root tensor is not recorded on this tape")
        if root.values.size != 1:
            raise ShapeError(f"backward requires a scalar-shaped root, got shape {root.shape}")
        self.gradients = {root.node_id: np.ones_like(root.values)}
        for out_id, fn in reversed(self._records):
            g = self.gradients.get(out_id)
            if g is not None:
                fn(g)
        return GradientMap(self)


class GradientMap:
    """Read-only view of the gradients accumulated by a backward pass."""

    __slots__ = ("_tape",)

    def __init__(self, tape: Tape):
        self._tape = tape

    def get(self, t: Tensor) -> np.ndarray | None:
        if t._tape is not self._tape or t.node_id is None:
            return None
        return self._tape.gradients.get(t.node_id)

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self.get(t)
        if g is None:
            raise KeyError("tensor has no gradient on this tape")
        return g

    def __contains__(self, t: Tensor) -> bool:
        return self.get(t) is not None


def backward(root: Tensor) -> GradientMap:
    """Run the backward sweep from a scalar-shaped root."""
    if root._tape is None:
        raise ValueError("root tensor is not attached to a tape")
    return root._tape.backward(root)


def _emit(values: np.ndarray, inputs: Sequence[tuple[Tensor, Callable | None]]) -> Tensor:
    """Create the output tensor and record its backward rule if a tape is live.

    ``inputs`` pairs each input tensor with a function mapping the output
    gradient to that input's gradient (or None for non-differentiable inputs).
    """
    out = Tensor(values)
    tape = _active_tape()
    if tape is None:
        return out
    tracked: list[tuple[int, Callable]] = []
    for t, gfn in inputs:
        nid = tape.bind(t)
        if nid is not None and gfn is not None:
            tracked.append((nid, gfn))
    if not tracked:
        return out
    out.requires_grad = True
    out._tape = tape
    out.node_id = tape._new_id()
    accum = tape._accum

    def _back(g: np.ndarray, tracked=tracked, accum=accum) -> None:
        for nid, gfn in tracked:
            accum(nid, gfn(g))

    tape._records.append((out.node_id, _back))
    return out


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Collapse a broadcasted gradient back to a size-1 operand's shape."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def _check_binary(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} are incompatible "
                         "(must be equal, or one operand a scalar)")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary("add", a, b)
    return _emit(a.values + b.values,
                 [(a, lambda g: _reduce_to(g, a.shape)),
                  (b, lambda g: _reduce_to(g, b.shape))])


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary("sub", a, b)
    return _emit(a.values - b.values,
                 [(a, lambda g: _reduce_to(g, a.shape)),
                  (b, lambda g: _reduce_to(-g, b.shape))])


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary("mul", a, b)
    va, vb = a.values, b.values
    return _emit(va * vb,
                 [(a, lambda g: _reduce_to(g * vb, a.shape)),
                  (b, lambda g: _reduce_to(g * va, b.shape))])


def neg(a: Tensor) -> Tensor:
    return _emit(-a.values, [(a, lambda g: -g)])


def absolute(a: Tensor) -> Tensor:
    # Subgradient 0 at exactly 0 (np.sign(0) == 0).
    va = a.values
    return _emit(np.abs(va), [(a, lambda g: g * np.sign(va))])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _emit(out, [(a, lambda g: g * out)])


def log(a: Tensor) -> Tensor:
    va = a.values
    if va.size and va.min() <= 0.0:
        raise ValueError("log requires strictly positive input")
    return _emit(np.log(va), [(a, lambda g: g / va)])


def softplus(a: Tensor) -> Tensor:
    va = a.values
    return _emit(np.logaddexp(0.0, va), [(a, lambda g: g * _sigmoid_values(va))])


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # 0.5 * (1 + tanh(x/2)) is an overflow-free identity for the logistic.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_values(a.values)
    return _emit(out, [(a, lambda g: g * out * (1.0 - out))])


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    return _emit(out, [(a, lambda g: g * (1.0 - out * out))])


def relu(a: Tensor) -> Tensor:
    va = a.values
    return _emit(np.maximum(va, 0.0), [(a, lambda g: g * (va > 0.0))])


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2:
        raise ShapeError(f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    va, vb = a.values, b.values
    return _emit(va @ vb,
                 [(a, lambda g: g @ vb.T),
                  (b, lambda g: va.T @ g)])


def transpose(a: Tensor) -> Tensor:
    if a.rank != 2:
        raise ShapeError(f"transpose requires a 2-D tensor, got {a.shape}")
    return _emit(a.values.T.copy(), [(a, lambda g: g.T)])


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    old = a.shape
    return _emit(a.values.reshape(shape), [(a, lambda g: g.reshape(old))])


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat requires at least one part")
    rank = parts[0].rank
    if rank == 0:
        raise ShapeError("concat requires tensors of rank >= 1")
    axis = _normalize_axis(axis, rank)
    for p in parts[1:]:
        if p.rank != rank:
            raise ShapeError("concat parts must share rank")
        if any(p.shape[d] != parts[0].shape[d] for d in range(rank) if d != axis):
            raise ShapeError(f"concat parts have incompatible shapes "
                             f"{[q.shape for q in parts]} along axis {axis}")
    values = np.concatenate([p.values for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def _part_grad(i: int):
        lo, hi = offsets[i], offsets[i + 1]
        idx = tuple(slice(None) if d != axis else slice(lo, hi) for d in range(rank))
        return lambda g: g[idx]

    return _emit(values, [(p, _part_grad(i)) for i, p in enumerate(parts)])


def _normalize_axis(axis: int, rank: int) -> int:
    if not -rank <= axis < rank:
        raise ShapeError(f"axis {axis} out of range for rank {rank}")
    return axis % rank


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    va = a.values
    if axis is None:
        shape = a.shape
        return _emit(np.asarray(va.sum()), [(a, lambda g: np.broadcast_to(g, shape))])
    ax = _normalize_axis(axis, a.rank)
    shape = a.shape
    return _emit(va.sum(axis=ax),
                 [(a, lambda g: np.broadcast_to(np.expand_dims(g, ax), shape))])


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    va = a.values
    if axis is None:
        n = a.size
        if n == 0:
            raise ShapeError("mean of an empty tensor is undefined")
        shape = a.shape
        return _emit(np.asarray(va.mean()),
                     [(a, lambda g: np.broadcast_to(g / n, shape))])
    ax = _normalize_axis(axis, a.rank)
    n = a.shape[ax]
    if n == 0:
        raise ShapeError("mean over an empty axis is undefined")
    shape = a.shape
    return _emit(va.mean(axis=ax),
                 [(a, lambda g: np.broadcast_to(np.expand_dims(g / n, ax), shape))])


def bias_add(a: Tensor, b: Tensor) -> Tensor:
    """Add a length-n vector to every row of an [m, n] matrix."""
    if a.rank != 2 or b.rank != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"bias_add expects [m, n] and [n], got {a.shape} and {b.shape}")
    return _emit(a.values + b.values,
                 [(a, lambda g: g),
                  (b, lambda g: g.sum(axis=0))])


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is 1 strictly inside, 0 outside."""
    va = a.values
    inside = (va > lo) & (va < hi)
    return _emit(np.clip(va, lo, hi), [(a, lambda g: g * inside)])


def select(a: Tensor, index: int, axis: int = 0) -> Tensor:
    """Take a single slice along an axis, dropping that axis."""
    ax = _normalize_axis(axis, a.rank)
    n = a.shape[ax]
    if not -n <= index < n:
        raise ShapeError(f"index {index} out of range for extent {n}")
    index = index % n
    va = a.values
    idx = tuple(slice(None) if d != ax else index for d in range(a.rank))
    shape = a.shape

    def _grad(g: np.ndarray) -> np.ndarray:
        gz = np.zeros(shape)
        gz[idx] = g
        return gz

    return _emit(va[idx], [(a, _grad)])


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column range of an [m, n] matrix."""
    if a.rank != 2:
        raise ShapeError(f"slice_cols requires a 2-D tensor, got {a.shape}")
    if not 0 <= start <= stop <= a.shape[1]:
        raise ShapeError(f"column range [{start}, {stop}) invalid for shape {a.shape}")
    shape = a.shape

    def _grad(g: np.ndarray) -> np.ndarray:
        gz = np.zeros(shape)
        gz[:, start:stop] = g
        return gz

    return _emit(a.values[:, start:stop], [(a, _grad)])


def roll(a: Tensor, shift: int) -> Tensor:
    """Cyclic shift of a 1-D tensor: output[i] = input[(i - shift) mod n]."""
    if a.rank != 1:
        raise ShapeError(f"roll requires a 1-D tensor, got {a.shape}")
    return _emit(np.roll(a.values, shift), [(a, lambda g: np.roll(g, -shift))])


def take_columns(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row-wise column gather: out[i, j] = a[i, idx[i, j]]."""
    if a.rank != 2:
        raise ShapeError(f"take_columns requires a 2-D tensor, got {a.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape != a.shape:
        raise ShapeError(f"index shape {idx.shape} must match tensor shape {a.shape}")
    rows = np.arange(a.shape[0])[:, None]
    shape = a.shape

    def _grad(g: np.ndarray) -> np.ndarray:
        gz = np.zeros(shape)
        np.add.at(gz, (rows, idx), g)
        return gz

    return _emit(a.values[rows, idx], [(a, _grad)])


def channels_matmul(x: Tensor, w: Tensor) -> Tensor:
    """Per-timestep channel mixing: [B, T, Cin] @ [Cin, Cout] -> [B, T, Cout]."""
    if x.rank != 3 or w.rank != 2 or x.shape[2] != w.shape[0]:
        raise ShapeError(f"channels_matmul expects [B, T, Cin] and [Cin, Cout], "
                         f"got {x.shape} and {w.shape}")
    vx, vw = x.values, w.values
    return _emit(vx @ vw,
                 [(x, lambda g: g @ vw.T),
                  (w, lambda g: np.einsum("bti,bto->io", vx, g))])


def causal_conv1d(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Dilated causal convolution along the time axis.

    out[b, t] = bias + sum_k weight[k] . x[b, t - (K-1-k)*dilation], with the
    input left-padded by zeros, so output[t] depends only on inputs at <= t.

    Shapes: x [B, T, Cin], weight [K, Cin, Cout], bias [Cout] -> [B, T, Cout].
    """
    if x.rank != 3 or weight.rank != 3 or bias.rank != 1:
        raise ShapeError("causal_conv1d expects x [B,T,Cin], weight [K,Cin,Cout], bias [Cout]")
    if x.shape[2] != weight.shape[1] or weight.shape[2] != bias.shape[0]:
        raise ShapeError(f"causal_conv1d channel mismatch: x {x.shape}, "
                         f"weight {weight.shape}, bias {bias.shape}")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    vx, vw, vb = x.values, weight.values, bias.values
    batch, steps, cin = vx.shape
    ksize, _, cout = vw.shape
    pad = (ksize - 1) * dilation
    xp = np.pad(vx, ((0, 0), (pad, 0), (0, 0)))
    out = np.broadcast_to(vb, (batch, steps, cout)).copy()
    flat_out = out.reshape(batch * steps, cout)
    shifted = [np.ascontiguousarray(xp[:, k * dilation:k * dilation + steps, :])
               .reshape(batch * steps, cin) for k in range(ksize)]
    for k in range(ksize):
        flat_out += shifted[k] @ vw[k]

    def _grad_x(g: np.ndarray) -> np.ndarray:
        gf = g.reshape(batch * steps, cout)
        gxp = np.zeros_like(xp)
        for k in range(ksize):
            gxp[:, k * dilation:k * dilation + steps, :] += \
                (gf @ vw[k].T).reshape(batch, steps, cin)
        return gxp[:, pad:, :]

    def _grad_w(g: np.ndarray) -> np.ndarray:
        gf = g.reshape(batch * steps, cout)
        gw = np.empty_like(vw)
        for k in range(ksize):
            gw[k] = shifted[k].T @ gf
        return gw

    return _emit(out, [(x, _grad_x),
                       (weight, _grad_w),
                       (bias, lambda g: g.sum(axis=(0, 1)))])


def lstm_cell(x_t: Tensor, h: Tensor, c: Tensor, w: Tensor, u: Tensor,
              b: Tensor) -> Tensor:
    """One fused LSTM cell update, returning [h_new | c_new] as [B, 2H].

    Gate blocks are stacked in (input, forget, candidate, output) order:
    w [4H, in], u [4H, H], b [4H]. Fusing the cell into a single node keeps
    the tape short for long sequences; the backward rule is the standard
    LSTM cell chain rule.
    """
    if x_t.rank != 2 or h.rank != 2 or c.rank != 2:
        raise ShapeError("lstm_cell expects 2-D x_t, h, c")
    hidden = h.shape[1]
    if (w.shape != (4 * hidden, x_t.shape[1]) or u.shape != (4 * hidden, hidden)
            or b.shape != (4 * hidden,) or c.shape != h.shape
            or x_t.shape[0] != h.shape[0]):
        raise ShapeError(f"lstm_cell shape mismatch: x_t {x_t.shape}, h {h.shape}, "
                         f"c {c.shape}, w {w.shape}, u {u.shape}, b {b.shape}")
    vx, vh, vc = x_t.values, h.values, c.values
    pre = vx @ w.values.T + vh @ u.values.T + b.values
    gi = _sigmoid_values(pre[:, :hidden])
    gf = _sigmoid_values(pre[:, hidden:2 * hidden])
    gg = np.tanh(pre[:, 2 * hidden:3 * hidden])
    go = _sigmoid_values(pre[:, 3 * hidden:])
    c_new = gf * vc + gi * gg
    tanh_c = np.tanh(c_new)
    h_new = go * tanh_c
    out = np.concatenate([h_new, c_new], axis=1)
    vw, vu = w.values, u.values

    result = Tensor(out)
    tape = _active_tape()
    if tape is None:
        return result
    ids = {name: tape.bind(t) for name, t in
           (("x", x_t), ("h", h), ("c", c), ("w", w), ("u", u), ("b", b))}
    if all(nid is None for nid in ids.values()):
        return result
    result.requires_grad = True
    result._tape = tape
    result.node_id = tape._new_id()
    accum = tape._accum

    def _back(g: np.ndarray) -> None:
        dh, dc_in = g[:, :hidden], g[:, hidden:]
        dc = dc_in + dh * go * (1.0 - tanh_c * tanh_c)
        dpre = np.concatenate([
            dc * gg * gi * (1.0 - gi),
            dc * vc * gf * (1.0 - gf),
            dc * gi * (1.0 - gg * gg),
            dh * tanh_c * go * (1.0 - go),
        ], axis=1)
        if ids["x"] is not None:
            accum(ids["x"], dpre @ vw)
        if ids["h"] is not None:
            accum(ids["h"], dpre @ vu)
        if ids["c"] is not None:
            accum(ids["c"], dc * gf)
        if ids["w"] is not None:
            accum(ids["w"], dpre.T @ vx)
        if ids["u"] is not None:
            accum(ids["u"], dpre.T @ vh)
        if ids["b"] is not None:
            accum(ids["b"], dpre.sum(axis=0))

    tape._records.append((result.node_id, _back))
    return result


# ---------------------------------------------------------------------------
# dispatch surface

_ELEMENTWISE_UNARY = {"neg": neg, "abs": absolute, "exp": exp, "log": log,
                      "softplus": softplus}
_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_REDUCTIONS = {"sum": reduce_sum, "mean": reduce_mean}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Elementwise op dispatch: add/sub/mul are binary, the rest unary."""
    if kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"elementwise '{kind}' requires two operands")
        return _ELEMENTWISE_BINARY[kind](a, b)
    if kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ValueError(f"elementwise '{kind}' takes a single operand")
        return _ELEMENTWISE_UNARY[kind](a)
    raise ValueError(f"unknown elementwise kind '{kind}'")


def activations(kind: str, a: Tensor) -> Tensor:
    try:
        return _ACTIVATIONS[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation kind '{kind}'") from None


def reduce(kind: str, a: Tensor, axis: int | None = None) -> Tensor:
    try:
        return _REDUCTIONS[kind](a, axis)
    except KeyError:
        raise ValueError(f"unknown reduction kind '{kind}'") from None


# ---------------------------------------------------------------------------
# randomness

_SEED_MASK = (1 << 64) - 1

RNG_ALGORITHM = "philox4x64"


class RngStream:
    """Deterministic counter-based random stream.

    Each (seed, stream) pair indexes an independent Philox-4x64 stream, so
    parallel consumers can each own a stream and reproduce serial execution
    exactly. ``draws`` counts the values drawn so far.
    """

    __slots__ = ("seed", "stream", "draws", "_gen")

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed & _SEED_MASK, self.stream & _SEED_MASK],
                       dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self.draws = 0

    def substream(self, index: int) -> "RngStream":
        """Independent stream derived from (seed, index)."""
        return RngStream(self.seed, index)

    def normal(self, shape: Sequence[int] | tuple[int, ...] = ()) -> np.ndarray:
        out = self._gen.standard_normal(shape)
        self.draws += out.size if isinstance(out, np.ndarray) else 1
        return np.asarray(out, dtype=np.float64)

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        out = self._gen.uniform(low, high, shape)
        arr = np.asarray(out, dtype=np.float64)
        self.draws += arr.size
        return arr

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        out = self._gen.integers(low, high, size=shape)
        arr = np.asarray(out)
        self.draws += arr.size
        return arr

    def __repr__(self) -> str:
        return (f"RngStream(seed={self.seed}, stream={self.stream}, "
                f"algorithm={self.algorithm!r}, draws={self.draws})")


def standard_normal(rng: RngStream, shape: Sequence[int] | tuple[int, ...]) -> Tensor:
    """I.i.d. standard normal draws as a constant (never recorded on a tape)."""
    return Tensor(rng.normal(tuple(shape)))
