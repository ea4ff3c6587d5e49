"""Dense float64 tensors with reverse-mode automatic differentiation.

Deliberately minimal: just the primitive set the encoder, scoring functions, and
downstream regressors need, each with a hand-written backward rule, plus Adam and a
central-finite-difference gradient checker that serves as the independent oracle for
every differentiable composite in the repo.

Tensors wrap numpy arrays; ops never mutate inputs. Determinism matters more than
speed here: float64 everywhere, no threading assumptions beyond BLAS.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import NonFinite, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # operator sugar; the real rules live in the module functions below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    if tracked:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a, c: float) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data + c, (a,), lambda g: (g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul needs 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    return _make(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- nonlinearities ----------------------------------------------------------


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(np.asarray(a.data, dtype=np.float64))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


# -- shape ops ---------------------------------------------------------------


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat of nothing")
    if any(t.data.ndim != 2 for t in tensors):
        raise ShapeMismatch("concat_cols needs 2-d operands")
    widths = [t.data.shape[1] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=1)
    offsets = np.cumsum([0] + widths)

    def grad_fn(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(tensors)))

    return _make(data, tensors, grad_fn)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch(f"gather_rows needs a 2-d tensor, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.intp)

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(a.data[idx], (a,), grad_fn)


def assemble_rows(
    n_rows: int,
    width: int,
    pieces: Sequence[tuple[np.ndarray, "Tensor | np.ndarray"]],
) -> Tensor:
    """Build an (n_rows, width) matrix from row-index/block pairs; uncovered rows are zero.

    Blocks may be plain arrays (constants, e.g. historical embeddings) or tensors, in
    which case gradients route back to the block rows.
    """
    data = np.zeros((n_rows, width), dtype=np.float64)
    parents: list[Tensor] = []
    spans: list[tuple[np.ndarray, int]] = []  # (idx, parent position or -1)
    for idx, block in pieces:
        idx = np.asarray(idx, dtype=np.intp)
        if isinstance(block, Tensor):
            data[idx] = block.data
            spans.append((idx, len(parents)))
            parents.append(block)
        else:
            data[idx] = np.asarray(block, dtype=np.float64)

    def grad_fn(g):
        grads: list[np.ndarray | None] = [None] * len(parents)
        for idx, pos in spans:
            grads[pos] = g[idx]
        return tuple(grads)

    return _make(data, parents, grad_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


# -- reductions and norms -----------------------------------------------------


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    return _make(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.broadcast_to(g / n, a.data.shape).copy(),),
    )


def rowsum(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch(f"rowsum needs a 2-d tensor, got {a.data.shape}")
    n_cols = a.data.shape[1]
    return _make(
        a.data.sum(axis=1),
        (a,),
        lambda g: (np.repeat(g[:, None], n_cols, axis=1),),
    )


def l2norm_rows(a, eps: float = 0.0) -> Tensor:
    """Euclidean norm of each row of an (n, m) tensor. Subgradient 0 at the origin."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch(f"l2norm_rows needs a 2-d tensor, got {a.data.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1) + eps)

    def grad_fn(g):
        safe = np.where(norms > 0.0, norms, 1.0)
        return (g[:, None] * a.data / safe[:, None],)

    return _make(norms, (a,), grad_fn)


# -- losses -------------------------------------------------------------------


def mse(pred, target) -> Tensor:
    pred = _as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size
    return _make(np.asarray((diff * diff).mean()), (pred,), lambda g: (g * 2.0 * diff / n,))


def bce(pred, labels) -> Tensor:
    """Binary cross-entropy on probabilities in (0,1)."""
    pred = _as_tensor(pred)
    y = np.asarray(labels, dtype=np.float64)
    if pred.data.shape != y.shape:
        raise ShapeMismatch(f"bce shapes differ: {pred.data.shape} vs {y.shape}")
    p = pred.data
    n = p.size
    losses = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return _make(
        np.asarray(losses.mean()),
        (pred,),
        lambda g: (g * (p - y) / (p * (1.0 - p) * n),),
    )


def bce_with_logits(logits, labels) -> Tensor:
    """Mean Bernoulli NLL straight from logits; never saturates."""
    logits = _as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64)
    if logits.data.shape != y.shape:
        raise ShapeMismatch(f"bce shapes differ: {logits.data.shape} vs {y.shape}")
    x = logits.data
    n = x.size
    losses = (1.0 - y) * x + np.logaddexp(0.0, -x)
    return _make(
        np.asarray(losses.mean()),
        (logits,),
        lambda g: (g * (_sigmoid(x) - y) / n,),
    )


# -- tape ---------------------------------------------------------------------


def backward(loss: Tensor):
    """Reverse-mode sweep from a scalar; accumulates into `.grad` of reachable leaves."""
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar, got shape {loss.data.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and (parent.requires_grad or parent._parents):
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is not None:
            parent_grads = node._grad_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not (parent.requires_grad or parent._parents):
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        elif node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g


def zero_grads(params: Mapping[str, Tensor] | Iterable[Tensor]):
    values = params.values() if isinstance(params, Mapping) else params
    for p in values:
        p.grad = None


def collect_grads(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


# -- gradient checking ----------------------------------------------------------


def grad_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central finite differences.

    The denominator is max(|analytic|, |numeric|, 1e-8) per component.
    """
    zero_grads(params)
    out = f(params)
    if not np.isfinite(out.data).all():
        raise NonFinite("grad_check: objective is not finite")
    backward(out)
    analytic = {k: v.copy() for k, v in collect_grads(params).items()}

    def evaluate() -> float:
        value = f(params)
        v = float(value.data)
        if not np.isfinite(v):
            raise NonFinite("grad_check: objective not finite at perturbed point")
        return v

    max_err = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = evaluate()
            flat[i] = orig - eps
            f_minus = evaluate()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(ana[i]), abs(numeric), 1e-8)
            max_err = max(max_err, abs(ana[i] - numeric) / denom)
    return max_err


# -- optimizer --------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState | None,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[Mapping[str, Tensor], AdamState]:
    """Standard Adam update, in place on the parameter tensors."""
    if state is None:
        state = AdamState()
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = np.asarray(grads.get(name, np.zeros_like(p.data)), dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"adam: grad shape {g.shape} != param shape {p.data.shape} ({name})")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state
