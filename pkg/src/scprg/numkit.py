"""Dense float64 tensors with reverse-mode differentiation and Adam.

Deliberately small: 2-D matrix algebra, row softmax, layer norm, gathers
and concatenation -- the kernels the extraction head actually uses. Each
op records a backward closure on a tape; ``Tensor.backward`` walks the
tape in reverse topological order. Training math runs in float64; file
interchange is float32 and upcast on load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DomainError, ShapeError

LOG_FLOOR = 1e-12


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def backward(self) -> None:
        """Reverse-mode pass from a scalar root, accumulating into ``.grad``."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    # operator sugar; full behavior lives in the module-level functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def graph_names(root: Tensor) -> set[str]:
    """Names of every tensor reachable from ``root`` through the tape."""
    return {n.name for n in _toposort(root) if n.name is not None}


def _needs(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not _needs(t):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _grad_buf(t: Tensor) -> np.ndarray:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bw, name: str | None = None) -> Tensor:
    out = Tensor(data)
    out._parents = parents
    out.name = name
    out.requires_grad = any(p.requires_grad or p._parents for p in parents)
    if out.requires_grad:
        out._bw = bw
    return out


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")

    def bw(g):
        if _needs(a):
            _accum(a, g * b.data)
        if _needs(b):
            _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    def bw(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), bw)


def add_scalar(a: Tensor, s: float) -> Tensor:
    def bw(g):
        _accum(a, g)

    return _make(a.data + s, (a,), bw)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """x (n, d) + v (d,) broadcast over rows."""
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {x.shape} and {v.shape} do not conform")

    def bw(g):
        _accum(x, g)
        _accum(v, g.sum(axis=0))

    return _make(x.data + v.data[None, :], (x, v), bw)


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """x (n, d) * v (d,) broadcast over rows."""
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ShapeError(f"mul_rowvec: shapes {x.shape} and {v.shape} do not conform")

    def bw(g):
        _accum(x, g * v.data[None, :])
        _accum(v, (g * x.data).sum(axis=0))

    return _make(x.data * v.data[None, :], (x, v), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")

    def bw(g):
        if _needs(a):
            _accum(a, g @ b.data.T)
        if _needs(b):
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expects a matrix, got {a.shape}")

    def bw(g):
        _accum(a, g.T)

    return _make(a.data.T.copy(), (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not parts:
        raise ContractError("concat: empty input list")
    if axis not in (0, 1):
        raise ContractError("concat: axis must be 0 or 1")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = g[lo:hi] if axis == 0 else g[:, lo:hi]
            _accum(p, sl)

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


def _as_slice(idx: np.ndarray) -> slice | None:
    """Contiguous ascending indices as a slice, else None."""
    if idx.size == 0:
        return None
    lo = int(idx[0])
    if idx[-1] - lo == idx.size - 1 and (idx.size < 2 or np.array_equal(
            idx, np.arange(lo, lo + idx.size))):
        return slice(lo, lo + idx.size)
    return None


def gather_rows(x: Tensor, idx) -> Tensor:
    """Rows of a matrix by integer index; duplicate indices accumulate on backward."""
    idx = np.asarray(idx, dtype=np.intp)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows: expects a matrix, got {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ContractError(f"gather_rows: index out of range for {x.shape[0]} rows")

    def bw(g):
        if _needs(x):
            np.add.at(_grad_buf(x), idx, g)

    return _make(x.data[idx], (x,), bw)


def submatrix(x: Tensor, rows=None, cols=None) -> Tensor:
    """Index a matrix by row and/or column index arrays."""
    if x.ndim != 2:
        raise ShapeError(f"submatrix: expects a matrix, got {x.shape}")
    ridx = np.arange(x.shape[0], dtype=np.intp) if rows is None else np.asarray(rows, dtype=np.intp)
    cidx = np.arange(x.shape[1], dtype=np.intp) if cols is None else np.asarray(cols, dtype=np.intp)
    rsl, csl = _as_slice(ridx), _as_slice(cidx)

    def bw(g):
        if not _needs(x):
            return
        buf = _grad_buf(x)
        if rsl is not None and csl is not None:
            buf[rsl, csl] += g
        else:
            np.add.at(buf, np.ix_(ridx, cidx), g)

    data = x.data[rsl, csl] if (rsl is not None and csl is not None) else x.data[np.ix_(ridx, cidx)]
    return _make(np.ascontiguousarray(data), (x,), bw)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        _accum(a, g * y * (1.0 - y))

    return _make(y, (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Smooth tanh-form gelu; smoothness keeps finite-difference checks tight."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        _accum(a, g * dy)

    return _make(y, (a,), bw)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def bw(g):
        _accum(a, g * y)

    return _make(y, (a,), bw)


def log(a: Tensor) -> Tensor:
    """Clamped log: log(max(x, 1e-12)); flat below the floor."""
    clamped = np.maximum(a.data, LOG_FLOOR)

    def bw(g):
        _accum(a, np.where(a.data > LOG_FLOOR, g / clamped, 0.0))

    return _make(np.log(clamped), (a,), bw)


def absolute(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bw)


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise x**p for a fixed float exponent; p=0 is the constant 1."""
    if exponent == 0.0:
        return _make(np.ones_like(a.data), (a,), lambda g: None)
    y = np.power(a.data, exponent)

    def bw(g):
        _accum(a, g * exponent * np.power(a.data, exponent - 1.0))

    return _make(y, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Shift-invariant softmax over the last axis of a vector or matrix."""
    if a.data.size == 0 or a.shape[-1] == 0:
        raise DomainError("softmax: empty input")
    if not np.all(np.isfinite(a.data)):
        raise DomainError("softmax: input contains non-finite entries")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accum(a, y * (g - dot))

    return _make(y, (a,), bw)


def masked_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Row softmax with excluded positions receiving exactly zero probability."""
    if mask.shape != a.shape:
        raise ShapeError(f"masked_softmax: mask shape {mask.shape} != input shape {a.shape}")
    allowed = mask.astype(bool)
    if not allowed.any(axis=-1).all():
        raise DomainError("masked_softmax: a row masks out every class")
    neg = np.where(allowed, a.data, -np.inf)
    shifted = neg - neg.max(axis=-1, keepdims=True)
    e = np.where(allowed, np.exp(shifted), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accum(a, y * (g - dot))

    return _make(y, (a,), bw)


def normalize_rows(a: Tensor) -> Tensor:
    """Divide each row by its sum, turning nonnegative rows into distributions."""
    s = a.data.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise DomainError("normalize_rows: a row sums to zero or less")
    y = a.data / s

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accum(a, (g - dot) / s)

    return _make(y, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _make(np.asarray(a.data.sum()), (a,), bw)


def mean_rows(a: Tensor) -> Tensor:
    """Column means of a matrix, returned as a (1, d) row."""
    if a.ndim != 2:
        raise ShapeError(f"mean_rows: expects a matrix, got {a.shape}")
    n = a.shape[0]

    def bw(g):
        _accum(a, np.repeat(g, n, axis=0) / n)

    return _make(a.data.mean(axis=0, keepdims=True), (a,), bw)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with learnable gain and bias."""
    if x.ndim != 2 or gain.ndim != 1 or bias.ndim != 1:
        raise ShapeError("layernorm: expects (n,d) input with (d,) gain/bias")
    if x.shape[1] != gain.shape[0] or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"layernorm: width mismatch {x.shape} vs {gain.shape}/{bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data[None, :] + bias.data[None, :]

    def bw(g):
        _accum(gain, (g * xhat).sum(axis=0))
        _accum(bias, g.sum(axis=0))
        if x.requires_grad or x._parents:
            dxhat = g * gain.data[None, :]
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _make(y, (x, gain, bias), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bw(g):
        _accum(x, g * mask)

    return _make(x.data * mask, (x,), bw)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: Sequence[Tensor], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(state: AdamState, params: Sequence[Tensor],
              grads: Sequence[np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params) or len(params) != len(state.m):
        raise ContractError("adam_step: params, grads and state lengths differ")
    state.step += 1
    t = state.step
    b1c = 1.0 - state.beta1**t
    b2c = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def grad_check(build: Callable[[], Tensor], params: Sequence[Tensor],
               step: float = 1e-6, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between reverse-mode and central finite differences.

    ``build`` re-evaluates the scalar loss from the current ``params`` data.
    Error per coordinate is |g_ad - g_fd| / max(1, |g_fd|); the max over all
    checked coordinates is returned. ``max_coords`` subsamples coordinates
    per parameter for large tensors.
    """
    zero_grads(params)
    loss = build()
    if loss.data.size != 1:
        raise ContractError(f"grad_check: loss must be scalar, got shape {loss.shape}")
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = gen.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = build().item()
            flat[i] = orig - step
            f_minus = build().item()
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(ga.reshape(-1)[i] - g_fd) / max(1.0, abs(g_fd))
            if err > worst:
                worst = err
    return worst
