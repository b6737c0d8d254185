"""Dense rank-1/rank-2 arrays with reverse-mode differentiation.

Every learnable computation in the package is written against :class:`Tensor`
so gradients come out of :func:`backward` mechanically and can be audited with
:func:`finite_diff_check`.  Storage is a row-major float64 ``numpy`` array;
batching happens in an outer Python loop over instances, never along a
tensor axis.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when a caller violates an operation's precondition."""


class Tensor:
    """A float64 array plus a gradient slot and a link into the backward graph."""

    __slots__ = ("data", "_grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 2:
            raise ShapeError(f"rank > 2 not supported: shape {arr.shape}")
        self.data = arr
        self._grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zeros until a backward pass reaches this tensor."""
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = np.array(value, dtype=np.float64).reshape(self.data.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self._grad = None

    def backward(self) -> None:
        backward(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out._grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        # constants never enter the graph as parents needing accumulation
        out._parents = parents
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _as_matrix(t: Tensor) -> np.ndarray:
    return t.data if t.data.ndim == 2 else t.data.reshape(1, -1)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a ``[p, q]`` and a ``[q, r]`` tensor."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def rule(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _result(ad @ bd, (a, b), rule)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fused ``x @ w.T + b`` for ``x [p, q]``, ``w [r, q]``, ``b [r]``."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear shape mismatch: x {x.shape}, w {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is None:
        return _result(out, (x, w), lambda g: (g @ wd if x.requires_grad else None, g.T @ xd))
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear bias {b.shape} does not match w {w.shape}")

    def rule(g):
        return (g @ wd if x.requires_grad else None,
                g.T @ xd if w.requires_grad else None,
                g.sum(axis=0) if b.requires_grad else None)

    return _result(out + b.data, (x, w, b), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a 1-D ``b`` of length q broadcasts over the rows of a ``[p, q]`` ``a``."""
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def transpose(a: Tensor) -> Tensor:
    m = _as_matrix(a)
    shape = a.shape
    return _result(m.T.copy(), (a,), lambda g: (g.T.reshape(shape),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),))


def relu(t: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at 0 is taken as 0."""
    mask = t.data > 0
    return _result(np.where(mask, t.data, 0.0), (t,), lambda g: (g * mask,))


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax, stabilised by subtracting each row's maximum."""
    if m.data.ndim != 2 or m.shape[1] < 1:
        raise ShapeError(f"softmax_rows needs a [p, q>=1] matrix, got {m.shape}")
    if not np.all(np.isfinite(m.data)):
        raise FloatingPointError("softmax_rows received non-finite scores")
    z = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _result(s, (m,), rule)


def log_softmax(v: Tensor) -> Tensor:
    """Log-softmax over a 1-D tensor (or the single row of a ``[1, C]`` one)."""
    x = v.data.reshape(-1)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("log_softmax received non-finite logits")
    mx = x.max()
    lse = mx + np.log(np.exp(x - mx).sum())
    out = x - lse
    p = np.exp(out)
    shape = v.shape

    def rule(g):
        gf = g.reshape(-1)
        return ((gf - p * gf.sum()).reshape(shape),)

    return _result(out.reshape(shape), (v,), rule)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate ``[p, q_i]`` tensors along columns, in list order."""
    if not parts:
        raise ContractError("concat_cols needs at least one part")
    if len(parts) == 1:
        return parts[0]
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(f"concat_cols row mismatch: {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def rule(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), rule)


def take_rows(t: Tensor, index: Sequence[int]) -> Tensor:
    """Gather rows ``t[index]`` (repeats allowed); gradients scatter-add back."""
    idx = np.asarray(index, dtype=np.intp)
    shape = t.shape

    def rule(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(t.data[idx], (t,), rule)


def max_rows(t: Tensor, rows: Sequence[int] | None = None) -> Tensor:
    """Coordinate-wise max over the selected rows of a matrix, as a ``[1, q]`` row.

    Ties route the gradient to the first maximising row.
    """
    idx = np.arange(t.shape[0]) if rows is None else np.asarray(rows, dtype=np.intp)
    if idx.size == 0:
        raise ContractError("max_rows needs at least one row")
    sub = t.data[idx]
    arg = sub.argmax(axis=0)
    winners = idx[arg]
    cols = np.arange(t.shape[1])
    shape = t.shape

    def rule(g):
        out = np.zeros(shape)
        out[winners, cols] = g.reshape(-1)
        return (out,)

    return _result(sub[arg, cols].reshape(1, -1), (t,), rule)


def pick(t: Tensor, i: int) -> Tensor:
    """Select one element of a flattened tensor as a scalar tensor."""
    flat = t.data.reshape(-1)
    shape = t.shape

    def rule(g):
        out = np.zeros(flat.size)
        out[i] = g.reshape(-1)[0]
        return (out.reshape(shape),)

    return _result(flat[i:i + 1].copy(), (t,), rule)


def sum_all(t: Tensor) -> Tensor:
    shape = t.shape
    return _result(np.array([t.data.sum()]), (t,), lambda g: (np.full(shape, g[0]),))


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d t`` into ``t.grad`` for every reachable tensor.

    Leaf gradients accumulate across calls; use :func:`zero_grads` between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    upstream: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node._grad is None:
                node._grad = np.array(g, dtype=np.float64)
            else:
                node._grad += g
            continue
        # interior gradients are kept by reference; the arrays may be shared
        node._grad = g if node._grad is None else node._grad + g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in upstream:
                upstream[key] = upstream[key] + pg
            else:
                upstream[key] = np.array(pg, dtype=np.float64).reshape(parent.shape)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


class Rng:
    """Seeded generator; identical seeds give bit-identical draw sequences."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, label: str) -> Rng:
        """An independent child generator selected by a fixed text label."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode("utf-8"))])
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)

    def choice(self, n: int, size=None, replace: bool = True):
        return self._gen.choice(n, size=size, replace=replace)


@dataclass
class GradCheckReport:
    max_rel_error: list[float]
    failures: list[tuple[int, int, float, float]] = field(default_factory=list)
    tol: float = 1e-4
    floor: float = 1e-8

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error, default=0.0)


def _rel_error(a: float, n: float, floor: float = 1e-8) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    noise_ulps: float = 10.0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` with central differences.

    ``f`` must rebuild its graph from the current parameter values on every
    call.

    The relative error of an entry is ``|a - n| / max(|a|, |n|, floor)``.
    ``floor`` is 1e-8 or the smallest gradient the difference quotient can
    resolve to ``tol``, whichever is larger.  A quotient over a loss of size
    ``|f|`` carries roundoff of roughly ``noise_ulps * eps_mach * |f| / eps``,
    so entries below ``noise / tol`` are judged against that noise instead of
    their own (unresolvable) magnitude.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    zero_grads(params)
    loss = f()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    zero_grads(params)
    noise = noise_ulps * np.finfo(np.float64).eps * max(abs(loss.item()), 1.0) / eps
    floor = max(1e-8, noise / tol)

    report = GradCheckReport(max_rel_error=[], tol=tol, floor=floor)
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        ga = analytic[pi].reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = f().item()
            flat[j] = orig - eps
            down = f().item()
            flat[j] = orig
            num = (up - down) / (2 * eps)
            err = _rel_error(ga[j], num, floor)
            worst = max(worst, err)
            if err > tol:
                report.failures.append((pi, j, float(ga[j]), float(num)))
        report.max_rel_error.append(worst)
    return report
