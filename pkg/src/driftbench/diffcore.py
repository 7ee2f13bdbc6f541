"""Reverse-mode gradient tape over a handful of array primitives.

Only what the prototype and head objectives need: add, scale,
elementwise mul, dot (last-axis inner product), matmul, row-wise L2
normalisation, tanh and softmax cross-entropy. Values are numpy arrays;
broadcasting in add/mul/dot is undone in the backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .errors import ContractError, NumericError, ShapeError


class Node:
    __slots__ = ("index", "value", "parents", "name")

    def __init__(self, index, value, parents=(), name=None):
        self.index = index
        self.value = value
        self.parents = parents  # tuple of (Node, vjp)
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node({self.index}, shape={self.shape}, name={self.name!r})"


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Append-only record of primitive ops; nodes are created in topological order."""

    def __init__(self):
        self.nodes = []
        self.params: Dict[str, Node] = {}
        self.adjoints: Optional[Dict[int, np.ndarray]] = None

    def _push(self, value, parents=(), name=None) -> Node:
        node = Node(len(self.nodes), value, tuple(parents), name)
        self.nodes.append(node)
        return node

    def param(self, name: str, value) -> Node:
        """Register a trainable leaf; re-registering a name returns the same node."""
        if name in self.params:
            return self.params[name]
        node = self._push(np.asarray(value, dtype=np.float64), name=name)
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        return self._push(np.asarray(value, dtype=np.float64))

    def detach(self, node: Node) -> Node:
        return self.const(node.value)

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            return x
        return self.const(x)

    # --- primitives -----------------------------------------------------

    def add(self, a, b) -> Node:
        a, b = self._lift(a), self._lift(b)
        return self._push(
            a.value + b.value,
            [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
        )

    def scale(self, a, s: float) -> Node:
        a = self._lift(a)
        s = float(s)
        return self._push(a.value * s, [(a, lambda g: g * s)])

    def mul(self, a, b) -> Node:
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        return self._push(
            av * bv,
            [(a, lambda g: _unbroadcast(g * bv, a.shape)), (b, lambda g: _unbroadcast(g * av, b.shape))],
        )

    def dot(self, a, b) -> Node:
        """Inner product over the last axis, broadcasting leading axes."""
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        if av.shape[-1:] != bv.shape[-1:]:
            raise ShapeError(f"dot: last axes differ {av.shape} vs {bv.shape}")
        out = np.sum(av * bv, axis=-1)
        return self._push(
            out,
            [
                (a, lambda g: _unbroadcast(np.asarray(g)[..., None] * bv, a.shape)),
                (b, lambda g: _unbroadcast(np.asarray(g)[..., None] * av, b.shape)),
            ],
        )

    def matmul(self, a, b, trans_b: bool = False) -> Node:
        """``a @ b`` (or ``a @ b.T``) for matrix b with any-rank a, or matrix @ vector."""
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        if bv.ndim == 2:
            bm = bv.T if trans_b else bv
            if av.shape[-1] != bm.shape[0]:
                raise ShapeError(f"matmul: {av.shape} @ {bm.shape}")
            out = av @ bm
            k, n = bm.shape

            def ga(g):
                return g @ bm.T

            def gb(g):
                gm = av.reshape(-1, k).T @ np.asarray(g).reshape(-1, n)
                return gm.T if trans_b else gm

        elif bv.ndim == 1 and av.ndim == 2 and not trans_b:
            if av.shape[1] != bv.shape[0]:
                raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")
            out = av @ bv

            def ga(g):
                return np.outer(g, bv)

            def gb(g):
                return av.T @ g

        else:
            raise ShapeError(f"matmul: unsupported shapes {av.shape}, {bv.shape}")
        return self._push(out, [(a, ga), (b, gb)])

    def l2_normalize(self, a) -> Node:
        """x / ||x|| along the last axis; zero vectors map to 0 with zero subgradient."""
        a = self._lift(a)
        x = a.value
        norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
        safe = np.where(norm > 0.0, norm, 1.0)
        y = np.where(norm > 0.0, x / safe, 0.0)

        def vjp(g):
            proj = np.sum(g * y, axis=-1, keepdims=True)
            return np.where(norm > 0.0, (g - y * proj) / safe, 0.0)

        return self._push(y, [(a, vjp)])

    def tanh(self, a) -> Node:
        a = self._lift(a)
        y = np.tanh(a.value)
        return self._push(y, [(a, lambda g: g * (1.0 - y * y))])

    def softmax_ce(self, logits, targets, mask=None) -> Node:
        """Mean cross-entropy of rows of ``logits`` against integer targets.

        ``mask`` (same shape as logits) excludes padded entries from the softmax.
        """
        z = self._lift(logits)
        loss, grad = softmax_cross_entropy_value(z.value, targets, mask)
        return self._push(np.asarray(loss), [(z, lambda g: g * grad)])


def softmax_cross_entropy_value(logits, targets, mask=None):
    """Loss and gradient w.r.t. logits, with max-subtraction for stability."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ShapeError("softmax_cross_entropy: empty logits")
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.shape[0] != z2.shape[0]:
        raise ShapeError(f"{t.shape[0]} targets for {z2.shape[0]} rows")
    C = z2.shape[1]
    if np.any(t < 0) or np.any(t >= C):
        raise ShapeError(f"target index out of range for {C} classes")
    if mask is None:
        m = np.ones_like(z2, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool).reshape(z2.shape)
        if not np.all(m[np.arange(len(t)), t]):
            raise ShapeError("target entry is masked out")
    zm = np.where(m, z2, -np.inf)
    shifted = zm - zm.max(axis=1, keepdims=True)
    ex = np.where(m, np.exp(shifted), 0.0)
    tot = ex.sum(axis=1, keepdims=True)
    rows = np.arange(len(t))
    losses = np.log(tot[:, 0]) - shifted[rows, t]
    p = ex / tot
    grad = p
    grad[rows, t] -= 1.0
    grad /= len(t)
    loss = float(losses.mean())
    return loss, (grad[0] if single else grad)


def backward(tape: Tape, loss: Node) -> Dict[str, np.ndarray]:
    """Populate adjoints from a scalar loss node; return gradients of all params."""
    if loss.index >= len(tape.nodes) or tape.nodes[loss.index] is not loss:
        raise ContractError("loss node is not on this tape")
    if np.size(loss.value) != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    adj = {loss.index: np.ones_like(loss.value, dtype=np.float64)}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = adj.get(node.index)
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            if parent.index in adj:
                adj[parent.index] = adj[parent.index] + contrib
            else:
                adj[parent.index] = contrib
    tape.adjoints = adj
    return {
        name: np.array(adj.get(node.index, np.zeros_like(node.value)), dtype=np.float64)
        for name, node in tape.params.items()
    }


# --- embedding ------------------------------------------------------------

@dataclass
class EmbeddingParams:
    """Linear feature map ``W @ x (+ bias)``, optionally after a tanh hidden layer.

    ``W`` has shape (D_emb, D_in), or (D_emb, H) with ``W_hidden`` (H, D_in).
    """

    W: np.ndarray
    bias: Optional[np.ndarray] = None
    W_hidden: Optional[np.ndarray] = None
    b_hidden: Optional[np.ndarray] = None

    def __post_init__(self):
        for name, arr in self.as_dict().items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"embedding parameter {name} has non-finite entries")

    @property
    def d_in(self) -> int:
        return (self.W_hidden if self.W_hidden is not None else self.W).shape[1]

    @property
    def d_emb(self) -> int:
        return self.W.shape[0]

    def as_dict(self) -> Dict[str, np.ndarray]:
        out = {"W": self.W}
        for name in ("bias", "W_hidden", "b_hidden"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out

    @classmethod
    def from_dict(cls, d: Dict[str, np.ndarray]) -> "EmbeddingParams":
        return cls(**{k: np.array(v, dtype=np.float64) for k, v in d.items()})

    def copy(self) -> "EmbeddingParams":
        return EmbeddingParams.from_dict(self.as_dict())

    @classmethod
    def init(cls, d_in, d_emb, rng=None, hidden=0, bias=False, kind="identity"):
        rng = rng if rng is not None else np.random.default_rng(0)
        first_out = hidden if hidden else d_emb

        def mat(rows, cols):
            if kind == "identity":
                return np.eye(rows, cols)
            return rng.standard_normal((rows, cols)) / np.sqrt(cols)

        if hidden:
            return cls(
                W=mat(d_emb, hidden),
                bias=np.zeros(d_emb) if bias else None,
                W_hidden=mat(first_out, d_in),
                b_hidden=np.zeros(hidden),
            )
        return cls(W=mat(d_emb, d_in), bias=np.zeros(d_emb) if bias else None)


def forward_embed(params: EmbeddingParams, x, tape: Optional[Tape] = None):
    """Embed one vector (D_in,) or a batch (n, D_in).

    Without a tape returns a numpy array; with a tape returns a Node and
    registers the parameters on it by name.
    """
    x_val = x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)
    if x_val.shape[-1] != params.d_in or x_val.ndim not in (1, 2):
        raise ShapeError(f"input shape {x_val.shape} does not match D_in={params.d_in}")
    if tape is None:
        h = x_val
        if params.W_hidden is not None:
            h = np.tanh(_affine(params.W_hidden, params.b_hidden, h))
        return _affine(params.W, params.bias, h)

    def aff(name_w, name_b, h):
        Wn = tape.param(name_w, getattr(params, name_w))
        if np.ndim(h.value if isinstance(h, Node) else h) == 1:
            out = tape.matmul(Wn, h)
        else:
            out = tape.matmul(h, Wn, trans_b=True)
        b = getattr(params, name_b)
        if b is not None:
            out = tape.add(out, tape.param(name_b, b))
        return out

    h = x
    if params.W_hidden is not None:
        h = tape.tanh(aff("W_hidden", "b_hidden", h))
    return aff("W", "bias", h)


def _affine(W, b, h):
    out = W @ h if h.ndim == 1 else h @ W.T
    return out if b is None else out + b


def softmax_cross_entropy(logits, target_index: int, tape: Optional[Tape] = None):
    """-log softmax(logits)[target]; returns a float, or a Node when taped."""
    if tape is not None:
        return tape.softmax_ce(logits, target_index)
    loss, _ = softmax_cross_entropy_value(logits, target_index)
    return loss


# --- finite-difference verifier --------------------------------------------

def grad_check(f: Callable, params, eps: float = 1e-5) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``f(params)`` returns ``(value, gradient)`` where ``params`` is an array
    or a dict of arrays and the gradient has the same structure. The error
    per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    is_dict = isinstance(params, dict)
    base = {k: np.array(v, dtype=np.float64) for k, v in (params.items() if is_dict else [("x", params)])}

    def call(p):
        return f(p if is_dict else p["x"])

    value, grad = call(base)
    if not np.all(np.isfinite(value)):
        raise NumericError("f returned a non-finite value")
    grad = grad if is_dict else {"x": grad}
    worst = 0.0
    for name, arr in base.items():
        g = np.asarray(grad[name], dtype=np.float64)
        if g.shape != arr.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {arr.shape}")
        flat = arr.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = call(base)[0]
            flat[k] = orig - eps
            fm = call(base)[0]
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"f non-finite near {name}[{k}]")
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(g.reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return float(worst)
