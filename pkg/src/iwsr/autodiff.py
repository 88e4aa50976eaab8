"""Dense-tensor reverse-mode automatic differentiation on numpy arrays.

Implements exactly the operation set the encoder, decoder and losses need:
elementwise arithmetic, activations, reductions, matmul, group norm,
3-D convolution, orthonormal 3-D FFT, nearest upsampling and differentiable
trilinear grid sampling.  Gradients accumulate add-into; callers zero them
explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "ComplexPair",
    "DimensionError",
    "ContractError",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "power",
    "relu",
    "sigmoid",
    "silu",
    "concat",
    "reshape",
    "getitem",
    "reduce_sum",
    "reduce_mean",
    "matmul",
    "group_norm",
    "nearest_upsample",
    "avg_pool",
    "conv3d",
    "fft3",
    "ifft3",
    "trilinear_sample",
    "backward",
    "zero_grads",
    "clamp_event_count",
    "reset_clamp_counter",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class ContractError(RuntimeError):
    """Raised when an operation's calling contract is violated."""


# Diagnostic counter for out-of-range sample coordinates (they are clamped,
# not rejected).
_CLAMP_EVENTS = 0


def clamp_event_count() -> int:
    return _CLAMP_EVENTS


def reset_clamp_counter() -> None:
    global _CLAMP_EVENTS
    _CLAMP_EVENTS = 0


def _as_float(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """N-dimensional array node in the autodiff graph.

    ``data`` is row-major (C-order).  ``grad`` is lazily allocated with the
    same shape and dtype.  Repeated backward passes accumulate unless the
    gradient is zeroed.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "backward_visits")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self.backward_visits = 0

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> int:
        return backward(self)

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # Operator sugar used throughout the model code.

    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


@dataclass
class ComplexPair:
    """Real/imaginary tensor pair produced by the forward FFT."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise DimensionError(
                f"complex pair shape mismatch: real {self.real.shape} vs imag {self.imag.shape}")


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise suite -------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _node(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return _node(-a.data, (a,), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * s)

    return _node(a.data * s, (a,), bw)


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise power; for non-integer p the base must stay positive."""
    p = float(p)
    data = np.power(a.data, p)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * p * np.power(a.data, p - 1.0))

    return _node(data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    return _node(a.data * mask, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    # Numerically stable two-sided form.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * out * (1.0 - out))

    return _node(out, (a,), bw)


def silu(a: Tensor) -> Tensor:
    return mul(a, sigmoid(a))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty tensor list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

    return _node(data, tuple(tensors), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), bw)


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.accumulate_grad(full)

    return _node(data, (a,), bw)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
            return
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        ge = g
        if not keepdims:
            ge = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
        a.accumulate_grad(np.broadcast_to(ge, a.shape).copy())

    return _node(data, (a,), bw)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax % a.ndim] for ax in axes]))
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner axes disagree: {a.shape[-1]} (lhs axis {a.ndim-1}) vs "
            f"{b.shape[-2]} (rhs axis {b.ndim-2})")
    data = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _node(data, (a, b), bw)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Group normalization over [B, C, *spatial] with per-channel affine."""
    if x.ndim < 2:
        raise DimensionError(f"group_norm needs at least [B, C] axes, got shape {x.shape}")
    b, c = x.shape[0], x.shape[1]
    if c % groups != 0:
        raise DimensionError(f"channel axis 1 (size {c}) not divisible by {groups} groups")
    spatial = x.shape[2:]
    xr = reshape(x, (b, groups, (c // groups) * int(np.prod(spatial, dtype=np.int64) or 1)))
    mu = reduce_mean(xr, axis=2, keepdims=True)
    xc = sub(xr, mu)
    var = reduce_mean(mul(xc, xc), axis=2, keepdims=True)
    inv = power(add(var, Tensor(np.asarray(eps, dtype=x.dtype))), -0.5)
    y = reshape(mul(xc, inv), x.shape)
    affine_shape = (1, c) + (1,) * len(spatial)
    return add(mul(y, reshape(gamma, affine_shape)), reshape(beta, affine_shape))


def nearest_upsample(x: Tensor, factors) -> Tensor:
    """Nearest-neighbor repetition along the trailing ``len(factors)`` axes."""
    factors = tuple(int(f) for f in factors)
    if any(f < 1 for f in factors):
        raise DimensionError(f"upsample factors must be >= 1, got {factors}")
    lead = x.ndim - len(factors)
    if lead < 0:
        raise DimensionError(f"{len(factors)} factors for a rank-{x.ndim} tensor")
    data = x.data
    for i, f in enumerate(factors):
        if f > 1:
            data = np.repeat(data, f, axis=lead + i)

    def bw(g):
        if not x.requires_grad:
            return
        # Fold each repeated axis back by summing over its repetition blocks.
        shp = []
        sum_axes = []
        for ax in range(lead):
            shp.append(x.shape[ax])
        for i, f in enumerate(factors):
            shp.extend([x.shape[lead + i], f])
            if f > 1:
                sum_axes.append(len(shp) - 1)
        gr = g.reshape(shp)
        if sum_axes:
            gr = gr.sum(axis=tuple(sum_axes))
        x.accumulate_grad(gr.reshape(x.shape))

    return _node(data, (x,), bw)


def avg_pool(x: Tensor, factors) -> Tensor:
    """Stride-f average pooling along the trailing ``len(factors)`` axes."""
    factors = tuple(int(f) for f in factors)
    lead = x.ndim - len(factors)
    shp = list(x.shape[:lead])
    axes = []
    for i, f in enumerate(factors):
        size = x.shape[lead + i]
        if size % f != 0:
            raise DimensionError(f"axis {lead + i} (size {size}) not divisible by pool factor {f}")
        shp.extend([size // f, f])
        if f > 1:
            axes.append(len(shp) - 1)
    y = reshape(x, shp)
    if axes:
        y = reduce_mean(y, axis=tuple(axes))
    out_shape = list(x.shape[:lead]) + [x.shape[lead + i] // f for i, f in enumerate(factors)]
    return reshape(y, out_shape)


# -- convolution --------------------------------------------------------------


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise DimensionError(f"expected 3 values, got {len(v)}")
        return tuple(int(x) for x in v)
    return (int(v),) * 3


def conv3d(x: Tensor, kernel: Tensor, stride=1, padding="same") -> Tensor:
    """Cross-correlation of [*, C_in, T, Z, X] with kernel [C_out, C_in, kt, kz, kx].

    Accepts 4-d (unbatched) or 5-d (leading batch axis) input.  ``padding``
    is ``"same"`` (stride 1, odd kernel) or an int/int-triple.
    """
    if kernel.ndim != 5:
        raise DimensionError(f"conv3d kernel must be rank 5, got rank {kernel.ndim}")
    batched = x.ndim == 5
    if x.ndim not in (4, 5):
        raise DimensionError(f"conv3d input must be rank 4 or 5, got rank {x.ndim}")
    cin_axis = 1 if batched else 0
    if x.shape[cin_axis] != kernel.shape[1]:
        raise DimensionError(
            f"input channel axis {cin_axis} has size {x.shape[cin_axis]} but kernel "
            f"expects {kernel.shape[1]} input channels")

    st = _triple(stride)
    co, ci, kt, kz, kx = kernel.shape
    if padding == "same":
        if st != (1, 1, 1):
            raise DimensionError("'same' padding requires stride 1")
        if kt % 2 == 0 or kz % 2 == 0 or kx % 2 == 0:
            raise DimensionError(f"'same' padding requires odd kernel axes, got {(kt, kz, kx)}")
        pad = (kt // 2, kz // 2, kx // 2)
    else:
        pad = _triple(padding)

    xd = x.data if batched else x.data[None]
    b = xd.shape[0]
    xp = np.pad(xd, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1]), (pad[2], pad[2])))
    sizes = xp.shape[2:]
    out_sp = []
    for ax, (size, k, s) in enumerate(zip(sizes, (kt, kz, kx), st)):
        n = (size - k) // s + 1
        if n < 1:
            raise DimensionError(f"spatial axis {ax} too small: padded size {size} < kernel {k}")
        out_sp.append(n)
    ot, oz, ox = out_sp
    vol = ot * oz * ox

    kd = kernel.data
    out = np.zeros((b, co, vol), dtype=xd.dtype)
    # Accumulate one kernel offset at a time; each offset is a strided slice
    # of the padded input contracted against a [C_out, C_in] weight plane.
    slices = {}
    for it in range(kt):
        for iz in range(kz):
            for ix in range(kx):
                sl = xp[:, :, it:it + st[0] * ot:st[0], iz:iz + st[1] * oz:st[1],
                        ix:ix + st[2] * ox:st[2]].reshape(b, ci, vol)
                slices[(it, iz, ix)] = sl
                out += np.matmul(kd[:, :, it, iz, ix], sl)
    out = out.reshape(b, co, ot, oz, ox)

    def bw(g):
        gb = g if batched else g[None]
        gf = gb.reshape(b, co, vol)
        if kernel.requires_grad:
            gk = np.zeros_like(kd)
            for (it, iz, ix), sl in slices.items():
                gk[:, :, it, iz, ix] = np.einsum("bov,bcv->oc", gf, sl)
            kernel.accumulate_grad(gk)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for (it, iz, ix) in slices:
                contrib = np.matmul(kd[:, :, it, iz, ix].T, gf).reshape(b, ci, ot, oz, ox)
                gxp[:, :, it:it + st[0] * ot:st[0], iz:iz + st[1] * oz:st[1],
                    ix:ix + st[2] * ox:st[2]] += contrib
            gx = gxp[:, :, pad[0]:pad[0] + xd.shape[2], pad[1]:pad[1] + xd.shape[3],
                     pad[2]:pad[2] + xd.shape[4]]
            x.accumulate_grad(gx if batched else gx[0])

    return _node(out if batched else out[0], (x, kernel), bw)


# -- Fourier transforms --------------------------------------------------------

_FFT_AXES = (-3, -2, -1)


def fft3(x: Tensor) -> ComplexPair:
    """Orthonormal 3-D DFT over the trailing (T, Z, X) axes of a real tensor."""
    if x.ndim < 3:
        raise DimensionError(f"fft3 needs at least 3 axes, got rank {x.ndim}")
    spec = np.fft.fftn(x.data, axes=_FFT_AXES, norm="ortho")
    dtype = x.dtype

    def bw_real(g):
        if x.requires_grad:
            x.accumulate_grad(np.fft.ifftn(g, axes=_FFT_AXES, norm="ortho").real.astype(dtype))

    def bw_imag(g):
        if x.requires_grad:
            x.accumulate_grad(-np.fft.ifftn(g, axes=_FFT_AXES, norm="ortho").imag.astype(dtype))

    real = _node(spec.real.astype(dtype), (x,), bw_real)
    imag = _node(spec.imag.astype(dtype), (x,), bw_imag)
    return ComplexPair(real, imag)


def ifft3(pair: ComplexPair) -> Tensor:
    """Real part of the orthonormal inverse 3-D DFT of a complex pair."""
    r, m = pair.real, pair.imag
    z = r.data.astype(np.complex128 if r.dtype == np.float64 else np.complex64)
    z = z + 1j * m.data
    out = np.fft.ifftn(z, axes=_FFT_AXES, norm="ortho").real.astype(r.dtype)

    def bw(g):
        gz = np.fft.ifftn(g, axes=_FFT_AXES, norm="ortho")
        if r.requires_grad:
            r.accumulate_grad(gz.real.astype(r.dtype))
        if m.requires_grad:
            m.accumulate_grad(-gz.imag.astype(m.dtype))

    return _node(out, (r, m), bw)


# -- trilinear grid sampling ---------------------------------------------------


def trilinear_sample(grid: Tensor, points) -> Tensor:
    """Sample [C, T, Z, X] at normalized (t, z, x) coordinates in [0, 1]^3.

    ``points`` is [N, 3] (Tensor or array).  Node i of an axis of size n sits
    at coordinate i / (n - 1).  Out-of-range coordinates are clamped and
    counted.  Differentiable in both the grid values and the coordinates.
    """
    global _CLAMP_EVENTS
    if grid.ndim != 4:
        raise DimensionError(f"trilinear_sample grid must be [C, T, Z, X], got rank {grid.ndim}")
    pts = points if isinstance(points, Tensor) else Tensor(np.asarray(points, dtype=grid.dtype))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError(f"points must be [N, 3], got {pts.shape}")

    p = pts.data
    outside = (p < 0.0) | (p > 1.0)
    _CLAMP_EVENTS += int(outside.sum())
    pc = np.clip(p, 0.0, 1.0)

    c = grid.shape[0]
    sizes = np.array(grid.shape[1:])
    n = p.shape[0]
    idx = pc * (sizes - 1)
    i0 = np.floor(idx).astype(np.int64)
    i0 = np.minimum(i0, np.maximum(sizes - 2, 0))
    frac = (idx - i0).astype(grid.dtype)
    i1 = np.minimum(i0 + 1, sizes - 1)

    gd = grid.data
    tzx = int(sizes[1] * sizes[2])
    flat = gd.reshape(c, -1)

    def lin(a, b, cc):
        return a * tzx + b * sizes[2] + cc

    corners = []
    out = np.zeros((n, c), dtype=grid.dtype)
    for bt in (0, 1):
        wt = frac[:, 0] if bt else 1.0 - frac[:, 0]
        ti = i1[:, 0] if bt else i0[:, 0]
        for bz in (0, 1):
            wz = frac[:, 1] if bz else 1.0 - frac[:, 1]
            zi = i1[:, 1] if bz else i0[:, 1]
            for bx in (0, 1):
                wx = frac[:, 2] if bx else 1.0 - frac[:, 2]
                xi = i1[:, 2] if bx else i0[:, 2]
                li = lin(ti, zi, xi)
                vals = flat[:, li]  # [C, N]
                w = (wt * wz * wx).astype(grid.dtype)
                corners.append((bt, bz, bx, li, vals, wt, wz, wx))
                out += (vals * w).T

    def bw(g):
        gt = g.T  # [C, N]
        if grid.requires_grad:
            acc = np.zeros((flat.shape[1], c), dtype=grid.dtype)
            for bt, bz, bx, li, _vals, wt, wz, wx in corners:
                w = (wt * wz * wx).astype(grid.dtype)
                np.add.at(acc, li, (gt * w).T)
            grid.accumulate_grad(acc.T.reshape(grid.shape))
        if pts.requires_grad:
            gp = np.zeros((n, 3), dtype=pts.dtype)
            for axis in range(3):
                d = np.zeros(n, dtype=np.float64)
                for bt, bz, bx, _li, vals, wt, wz, wx in corners:
                    bits = (bt, bz, bx)
                    ws = [wt, wz, wx]
                    sign = 1.0 if bits[axis] else -1.0
                    other = np.ones(n, dtype=np.float64)
                    for j in range(3):
                        if j != axis:
                            other = other * ws[j]
                    d += sign * other * (gt * vals).sum(axis=0)
                d *= (sizes[axis] - 1)
                d[outside[:, axis]] = 0.0
                gp[:, axis] = d.astype(pts.dtype)
            pts.accumulate_grad(gp)

    return _node(out, (grid, pts), bw)


# -- backward pass -------------------------------------------------------------


def backward(loss: Tensor) -> int:
    """Reverse-mode sweep from a scalar loss.

    Visits each reachable graph node exactly once and accumulates dLoss/dθ
    into every tensor with ``requires_grad``.  Returns the visit count.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.accumulate_grad(np.ones_like(loss.data))
    visits = 0
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)
            node.backward_visits += 1
            visits += 1
    return visits


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# -- parameter initialization ---------------------------------------------------


def uniform_init(shape, fan_in: int, rng: np.random.Generator,
                 dtype=np.float32) -> Tensor:
    """Centered uniform fan-in scaling init; the default for all weights."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    t = Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))
    t.requires_grad = True
    return t


def zeros_init(shape, dtype=np.float32) -> Tensor:
    t = Tensor(np.zeros(shape, dtype=dtype))
    t.requires_grad = True
    return t


def ones_init(shape, dtype=np.float32) -> Tensor:
    t = Tensor(np.ones(shape, dtype=dtype))
    t.requires_grad = True
    return t
