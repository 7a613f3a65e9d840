"""Dense reverse-mode automatic differentiation on float64 arrays.

Each primitive returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. ``backward`` orders the
recorded graph topologically (the tape) and runs the closures once each.
"""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}; step aborted")
        self.name = name


class GradCheckWarning(UserWarning):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self):
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, op=op)
    return Tensor(data, True, tuple(parents), backward_fn, op)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


# ---------------------------------------------------------------- primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    out = a.data @ b.data

    def bw(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _make(out, (a, b), bw, "matmul")


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias row added to every row of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        bias = False
    elif a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        bias = True
    elif b.ndim == 2 and a.ndim == 1 and a.shape[0] == b.shape[1]:
        return add(b, a)
    else:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    out = a.data + b.data

    def bw(g):
        _acc(a, g)
        _acc(b, g.sum(axis=0) if bias else g)

    return _make(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        _acc(a, c * g)

    return _make(a.data * c, (a,), bw, "scale")


def mul(a, b) -> Tensor:
    """Elementwise product of equal shapes; a python scalar operand is a constant scale."""
    if np.isscalar(b):
        return scale(a, b)
    if np.isscalar(a):
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise multiply needs equal shapes, got {a.shape} and {b.shape}")

    def bw(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw, "mul")


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along the last axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of nothing")
    lead = tensors[0].shape[:-1]
    for t in tensors:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat leading shapes differ: {lead} vs {t.shape[:-1]}")
    if axis not in (-1, tensors[0].ndim - 1):
        raise ShapeError("concat supports the last axis only")
    out = np.concatenate([t.data for t in tensors], axis=-1)
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _acc(t, g[..., lo:hi])

    return _make(out, tuple(tensors), bw, "concat")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient 0 at 0

    def bw(g):
        _acc(a, g * mask)

    return _make(a.data * mask, (a,), bw, "relu")


def softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _acc(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (a,), bw, "softmax")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    s = np.exp(y)

    def bw(g):
        _acc(a, g - s * g.sum(axis=-1, keepdims=True))

    return _make(y, (a,), bw, "log_softmax")


def row_normalize(a, eps: float = 1e-12) -> Tensor:
    """Divide each row by max(||row||_2, eps)."""
    a = as_tensor(a)
    norm = np.sqrt((a.data ** 2).sum(axis=-1, keepdims=True))
    guarded = np.maximum(norm, eps)
    y = a.data / guarded
    active = norm > eps

    def bw(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        _acc(a, (g - active * y * proj) / guarded)

    return _make(y, (a,), bw, "row_normalize")


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Standardize each row across features (no affine part)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        _acc(a, inv * (g - gm - y * gy))

    return _make(y, (a,), bw, "layer_norm")


def total(a) -> Tensor:
    """Sum of all entries."""
    a = as_tensor(a)

    def bw(g):
        _acc(a, np.broadcast_to(g, a.shape))

    return _make(a.data.sum(), (a,), bw, "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    count = a.data.size

    def bw(g):
        _acc(a, np.broadcast_to(g / count, a.shape))

    return _make(a.data.mean(), (a,), bw, "mean")


def row_sum(a) -> Tensor:
    """Sum over the last axis of a matrix, giving a vector."""
    a = as_tensor(a)

    def bw(g):
        _acc(a, np.broadcast_to(g[..., None], a.shape))

    return _make(a.data.sum(axis=-1), (a,), bw, "row_sum")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise FloatingPointError("log of non-positive value")

    def bw(g):
        _acc(a, g / a.data)

    return _make(np.log(a.data), (a,), bw, "log")


def square(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        _acc(a, 2.0 * g * a.data)

    return _make(a.data ** 2, (a,), bw, "square")


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        _acc(a, g.T)

    return _make(a.data.T, (a,), bw, "transpose")


def take(a, idx) -> Tensor:
    """Basic or fancy indexing; gradients scatter-add back."""
    a = as_tensor(a)
    out = a.data[idx]

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _acc(a, full)

    return _make(np.array(out), (a,), bw, "take")


def stack_scalars(items) -> Tensor:
    items = [as_tensor(t) for t in items]

    def bw(g):
        for t, gi in zip(items, g):
            _acc(t, gi)

    return _make(np.array([t.data for t in items]), tuple(items), bw, "stack")


def weighted_sum(weights, tensors) -> Tensor:
    """sum_r weights[r] * tensors[r] for a weight vector and equal-shape tensors."""
    weights = as_tensor(weights)
    tensors = [as_tensor(t) for t in tensors]
    if weights.shape != (len(tensors),):
        raise ShapeError(f"need {len(tensors)} weights, got shape {weights.shape}")
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ShapeError("weighted_sum operands differ in shape")
    out = sum(w * t.data for w, t in zip(weights.data, tensors))

    def bw(g):
        _acc(weights, np.array([(g * t.data).sum() for t in tensors]))
        for w, t in zip(weights.data, tensors):
            _acc(t, w * g)

    return _make(np.asarray(out, dtype=np.float64), (weights, *tensors), bw, "weighted_sum")


# ---------------------------------------------------------------- backward


def build_tape(loss: Tensor) -> list:
    """Operations reachable from ``loss`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = build_tape(loss)
    loss.grad = np.ones(())
    for node in reversed(tape):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in tape:
        if node._backward is not None:
            node.grad = None  # keep leaf grads only


# ---------------------------------------------------------------- gradient check


def grad_check(f, params, h: float = 1e-5, kink_tol: float = 1e-3) -> float:
    """Max relative error between backward gradients and central differences.

    ``f`` recomputes the scalar loss from the current contents of ``params``
    (a dict name -> Tensor or a list of Tensors). Components where the two
    one-sided differences disagree by more than ``kink_tol`` sit on a kink;
    they are skipped and reported through a :class:`GradCheckWarning`.
    """
    items = list(params.items()) if isinstance(params, dict) else list(enumerate(params))
    for _, p in items:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data):
        raise FloatingPointError("grad_check: f is not finite at params")
    backward(loss)
    f0 = float(loss.data)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for name, p in items}

    worst, skipped = 0.0, 0
    for name, p in items:
        flat = p.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"grad_check: f not finite near {name}[{i}]")
            right, left = (fp - f0) / h, (f0 - fm) / h
            if abs(right - left) > kink_tol * max(1.0, abs(right), abs(left)):
                skipped += 1
                continue
            num = (fp - fm) / (2 * h)
            err = abs(ga[i] - num) / max(1.0, abs(ga[i]), abs(num))
            worst = max(worst, err)
    for _, p in items:
        p.zero_grad()
    if skipped:
        warnings.warn(f"grad_check skipped {skipped} component(s) at a non-differentiable point", GradCheckWarning)
    return worst


# ---------------------------------------------------------------- init + Adam


def glorot(rng, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place, using each parameter's ``grad``.

    All gradients are validated before anything is modified, so a non-finite
    gradient leaves parameters and state untouched.
    """
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        grads[name] = g
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------- checkpoints

_CKPT_MAGIC = b"MANDATE-PARAMS\x00\x01"


def save_params(params: dict, path, manifest: dict | None = None) -> None:
    """Write ordered (name, shape, float64 LE payload) records and a JSON manifest beside them."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(params)))
        for name, p in params.items():
            arr = p.data if isinstance(p, Tensor) else np.asarray(p)
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    info = {
        "format": "mandate-params-v1",
        "params": [{"name": n, "shape": list(np.shape(p.data if isinstance(p, Tensor) else p))} for n, p in params.items()],
    }
    if manifest:
        info["architecture"] = manifest
    path.with_suffix(".json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def load_params(path) -> dict:
    """Read records written by :func:`save_params`; returns name -> ndarray in file order."""
    out = {}
    with open(path, "rb") as fh:
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        (count,) = struct.unpack("<Q", fh.read(8))
        for _ in range(count):
            (ln,) = struct.unpack("<I", fh.read(4))
            name = fh.read(ln).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return out


def load_manifest(path) -> dict:
    return json.loads(Path(path).with_suffix(".json").read_text())
