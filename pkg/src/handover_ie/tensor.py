"""Dense tensors with exact reverse-mode gradients for a fixed primitive set.

Every differentiable primitive records a vector-Jacobian closure so that
``backward`` on a scalar fills exact gradients for all reachable leaves.
float64 is the default precision; float32 is accepted and preserved.
Also home to the finite-difference gradient checker and the bit-exact
tensor archive used for checkpoints.
"""
from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

LAYER_NORM_EPS = 1e-12

_check_finite = False


def set_finite_checks(on: bool) -> None:
    """When on, every primitive asserts its output is NaN/Inf free."""
    global _check_finite
    _check_finite = on


class ShapeError(ValueError):
    pass


def _shape_error(op: str, a, b) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(np.shape(a))} and {tuple(np.shape(b))}")


class Tensor:
    """A dense array node in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


class Parameter(Tensor):
    """Named trainable leaf; its gradient buffer always matches its value."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(np.array(data, copy=True), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in primitive output")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(g.dtype, copy=False)


def backward(root: Tensor, seed: float = 1.0) -> None:
    """Reverse-mode sweep from a scalar root; accumulates into .grad."""
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    _accum(root, np.full_like(root.data, seed))
    for node in reversed(topo):
        if node._vjp is not None and node.grad is not None:
            node._vjp(node.grad)


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad[...] = 0.0


# --- primitives ---------------------------------------------------------------

def constant(data) -> Tensor:
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.data, b.data) from None

    def vjp(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a.data, b.data) from None

    def vjp(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    def vjp(g):
        _accum(a, g * c)

    return _result(a.data * c, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or equal-batch stacked matrix product."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2] \
            or a.data.shape[:-2] != b.data.shape[:-2]:
        raise _shape_error("matmul", a.data, b.data)
    data = a.data @ b.data

    def vjp(g):
        _accum(a, g @ b.data.swapaxes(-1, -2))
        _accum(b, a.data.swapaxes(-1, -2) @ g)

    return _result(data, (a, b), vjp)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    idx = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise _shape_error("embedding_lookup", table.data, idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.data.shape[0]}): "
            f"min={idx.min()}, max={idx.max()}"
        )
    data = table.data[idx]

    def vjp(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)

    return _result(data, (table,), vjp)


def softmax_rows(x: Tensor) -> Tensor:
    """Numerically stable softmax along the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accum(x, y * (g - inner))

    return _result(y, (x,), vjp)


def log_softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse

    def vjp(g):
        _accum(x, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _result(y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    h = x.data.shape[-1]
    if gain.data.shape != (h,) or bias.data.shape != (h,):
        raise _shape_error("layer_norm", x.data, gain.data)
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    data = xhat * gain.data + bias.data

    def vjp(g):
        _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        _accum(bias, _unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gx - m1 - xhat * m2))

    return _result(data, (x, gain, bias), vjp)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    data = x.data * cdf

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        _accum(x, g * (cdf + x.data * pdf))

    return _result(data, (x,), vjp)


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted-dropout mask: entries are 0 or 1/(1-rate), drawn from rng."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return Tensor(np.ones(shape))
    keep = rng.random(shape) >= rate
    return Tensor(keep.astype(np.float64) / (1.0 - rate))


def apply_dropout(x: Tensor, mask: Tensor) -> Tensor:
    return mul(x, mask)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.data.shape
    data = x.data.reshape(shape)

    def vjp(g):
        _accum(x, g.reshape(old))

    return _result(data, (x,), vjp)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        _accum(x, g.transpose(inverse))

    return _result(x.data.transpose(axes), (x,), vjp)


def masked_nll(log_probs: Tensor, labels: Sequence[int], ignore_index: int = -100) -> Tensor:
    """Mean negative log-probability of gold labels over non-ignored rows."""
    labs = np.asarray(labels, dtype=np.int64)
    if log_probs.data.ndim != 2 or labs.shape != (log_probs.data.shape[0],):
        raise _shape_error("masked_nll", log_probs.data, labs)
    rows = np.nonzero(labs != ignore_index)[0]
    if rows.size == 0:
        raise ValueError("all positions ignored; loss undefined")
    gold = labs[rows]
    if gold.min() < 0 or gold.max() >= log_probs.data.shape[1]:
        raise IndexError(f"label id out of range [0, {log_probs.data.shape[1]})")
    data = np.asarray(-log_probs.data[rows, gold].mean())

    def vjp(g):
        if log_probs.requires_grad:
            gl = np.zeros_like(log_probs.data)
            gl[rows, gold] = -float(g) / rows.size
            _accum(log_probs, gl)

    return _result(data, (log_probs,), vjp)


# --- gradient checking ----------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates where |analytic| + |numeric| <= 1e-12 are skipped. ``f``
    must be deterministic and return a scalar Tensor built from params.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise ValueError("function value is not finite")
    zero_grad(params)
    backward(out)
    analytic = [p.grad.copy() for p in params]

    max_rel = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            hi = float(f().data)
            flat[k] = orig - epsilon
            lo = float(f().data)
            flat[k] = orig
            numeric = (hi - lo) / (2.0 * epsilon)
            a = float(ana.reshape(-1)[k])
            denom = abs(a) + abs(numeric)
            if denom > 1e-12:
                max_rel = max(max_rel, abs(a - numeric) / denom)
    return max_rel


# --- tensor archive --------------------------------------------------------------

ARCHIVE_MAGIC = b"TARCH1\n"
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_archive(entries: Iterable[tuple[str, np.ndarray]], path: str) -> None:
    """Write named tensors: u32-LE name length, name, rank, extents, dtype tag, raw values."""
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        for name, arr in entries:
            arr = np.asarray(arr)
            if arr.dtype not in _TAG_OF:
                raise ValueError(f"entry {name!r}: unsupported dtype {arr.dtype}")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for n in arr.shape:
                fh.write(struct.pack("<I", n))
            fh.write(struct.pack("<I", _TAG_OF[arr.dtype]))
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_archive(path: str) -> dict[str, np.ndarray]:
    """Read an archive back into an ordered name -> array mapping."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(ARCHIVE_MAGIC))
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"bad archive magic {magic!r}")

        def read_u32() -> int | None:
            b = fh.read(4)
            if not b:
                return None
            if len(b) != 4:
                raise ValueError("truncated archive")
            return struct.unpack("<I", b)[0]

        while True:
            name_len = read_u32()
            if name_len is None:
                break
            name = fh.read(name_len).decode("utf-8")
            rank = read_u32()
            shape = tuple(read_u32() for _ in range(rank))
            tag = read_u32()
            if tag not in _DTYPE_TAGS:
                raise ValueError(f"entry {name!r}: unknown dtype tag {tag}")
            dtype = _DTYPE_TAGS[tag]
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ValueError(f"entry {name!r}: truncated payload")
            arr = np.frombuffer(buf, dtype=dtype).reshape(shape)
            out[name] = arr.astype(dtype.newbyteorder("="))
    return out
