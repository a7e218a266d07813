"""
Tensor core for SKI-CL.
Dense float64 arrays with reverse-mode automatic differentiation.
"""

import contextlib
import logging
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ConfigError

logger = logging.getLogger(__name__)

# Probability clamp used by binary cross-entropy
BCE_CLAMP = 1e-7

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """
    N-dimensional float64 array that records the operations producing it.

    Leaves are created directly; every operation returns a new tensor whose
    parents and local backward rule are kept while grad recording is on and
    at least one parent requires grad.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""

    # -- properties -----------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op='{self._op}')"

    # -- autodiff -------------------------------------------------------------

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """
        Accumulate d(self)/d(leaf) into the .grad of every reachable leaf.

        Gradients add to whatever .grad already holds; call zero_grad on the
        leaves between steps.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be a scalar, got shape {self.shape}")
        if not self.requires_grad:
            logger.debug("backward called on a tensor that does not require grad")
            return

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out._op = op
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, *shapes: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {' and '.join(str(s) for s in shapes)}")


# =============================================================================
# ELEMENTWISE
# =============================================================================


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def pow_(a: TensorLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return _result(np.power(a.data, exponent), (a,), backward, "pow")


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    active = a.data > 0
    return _result(np.where(active, a.data, 0.0), (a,), lambda g: (g * active,), "relu")


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    s = np.exp(-np.logaddexp(0.0, -a.data))
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


# =============================================================================
# LINEAR ALGEBRA AND SHAPE
# =============================================================================


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Batched matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    _check_broadcast("matmul", a.shape[:-2], b.shape[:-2])

    def backward(g):
        ga = np.matmul(g, _swap_last(b.data))
        gb = np.matmul(_swap_last(a.data), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no tensors given")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        other_axes_match = t.ndim == ndim and all(
            t.shape[i] == tensors[0].shape[i] for i in range(ndim) if i != axis
        )
        if not other_axes_match:
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}")
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(a: TensorLike, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), backward, "getitem")


# =============================================================================
# REDUCTIONS
# =============================================================================


def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def sum_(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (_expand_reduced(g, a.shape, axis, keepdims),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.data.size == 0:
        raise ShapeError("mean: empty tensor")
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / np.asarray(out).size

    def backward(g):
        return (_expand_reduced(g, a.shape, axis, keepdims) / count,)

    return _result(out, (a,), backward, "mean")


# =============================================================================
# LOSSES
# =============================================================================


def _weight_array(weight, shape, op: str) -> np.ndarray:
    if weight is None:
        return np.ones(shape)
    w = weight.data if isinstance(weight, Tensor) else np.asarray(weight, dtype=np.float64)
    _check_broadcast(op, w.shape, shape)
    return np.broadcast_to(w, shape)


def sum_squared_error(pred: TensorLike, target: TensorLike, weight=None) -> Tensor:
    """sum(weight * (pred - target)^2) as a scalar tensor."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"sum_squared_error: prediction {pred.shape} vs target {target.shape}")
    w = _weight_array(weight, pred.shape, "sum_squared_error")
    diff = pred.data - target.data

    def backward(g):
        gp = 2.0 * g * w * diff
        return gp, -gp

    return _result(np.sum(w * diff * diff), (pred, target), backward, "sum_squared_error")


def binary_cross_entropy(prob: TensorLike, target: TensorLike, weight=None) -> Tensor:
    """
    sum(weight * BCE(prob, target)) with prob clamped to [1e-7, 1 - 1e-7].

    Entries outside the clamp receive zero gradient. target is treated as constant.
    """
    prob, target = as_tensor(prob), as_tensor(target)
    if prob.shape != target.shape:
        raise ShapeError(f"binary_cross_entropy: probabilities {prob.shape} vs target {target.shape}")
    w = _weight_array(weight, prob.shape, "binary_cross_entropy")
    p = np.clip(prob.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = target.data
    terms = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    inside = (prob.data >= BCE_CLAMP) & (prob.data <= 1.0 - BCE_CLAMP)

    def backward(g):
        gp = g * w * (-t / p + (1.0 - t) / (1.0 - p)) * inside
        return gp, None

    return _result(np.sum(w * terms), (prob, target), backward, "binary_cross_entropy")


# =============================================================================
# CONVOLUTION
# =============================================================================


def conv1d(x: TensorLike, weight: TensorLike, dilation: int = 1, padding: str = "causal") -> Tensor:
    """
    Dilated 1-D convolution over the last axis.

    out[..., o, t] = sum_{c,k} weight[o, c, k] * x[..., c, t - dilation * k]

    Args:
        x: Input of shape (..., C_in, T)
        weight: Filter bank of shape (C_out, C_in, K)
        dilation: Spacing between taps (>= 1)
        padding: "causal" pads (K-1)*dilation zeros on the left and keeps T;
            "valid" drops the first (K-1)*dilation positions

    Returns:
        Tensor of shape (..., C_out, T_out)
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if int(dilation) != dilation or dilation < 1:
        raise ConfigError(f"conv1d: dilation must be a positive integer, got {dilation}")
    if weight.ndim != 3 or weight.shape[2] == 0:
        raise ConfigError(f"conv1d: filter must have shape (C_out, C_in, K>0), got {weight.shape}")
    if x.ndim < 2 or x.shape[-2] != weight.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not match filter {weight.shape}")
    if padding not in ("causal", "valid"):
        raise ConfigError(f"conv1d: unknown padding '{padding}'")

    c_out, c_in, k_size = weight.shape
    reach = int(dilation) * (k_size - 1)
    steps = x.shape[-1]
    if padding == "causal":
        pad = [(0, 0)] * (x.ndim - 1) + [(reach, 0)]
        padded = np.pad(x.data, pad)
        out_len = steps
    else:
        padded = x.data
        out_len = steps - reach
        if out_len < 1:
            raise ConfigError(f"conv1d: receptive field {reach + 1} exceeds input length {steps}")

    starts = [reach - int(dilation) * k for k in range(k_size)]
    out = np.zeros(x.shape[:-2] + (c_out, out_len))
    for k, start in enumerate(starts):
        out += np.matmul(weight.data[:, :, k], padded[..., start:start + out_len])

    def backward(g):
        g_padded = np.zeros_like(padded)
        g_weight = np.zeros_like(weight.data)
        g_flat = g.reshape(-1, c_out, out_len)
        for k, start in enumerate(starts):
            window = padded[..., start:start + out_len]
            g_padded[..., start:start + out_len] += np.matmul(weight.data[:, :, k].T, g)
            g_weight[:, :, k] = np.tensordot(
                g_flat, window.reshape(-1, c_in, out_len), axes=([0, 2], [0, 2])
            )
        g_x = g_padded[..., reach:] if padding == "causal" else g_padded
        return g_x, g_weight

    return _result(out, (x, weight), backward, "conv1d")


def dilated_causal_conv1d(h: TensorLike, f: TensorLike, dilation: int) -> Tensor:
    """
    Single-channel dilated causal convolution.

    y[t] = sum_k f[k] * h[t - dilation * k], with h[s] = 0 for s < 0.
    """
    h, f = as_tensor(h), as_tensor(f)
    if dilation <= 0:
        raise ConfigError(f"dilated_causal_conv1d: dilation must be > 0, got {dilation}")
    if f.ndim != 1 or f.shape[0] == 0:
        raise ConfigError(f"dilated_causal_conv1d: filter must be a non-empty vector, got {f.shape}")
    if h.ndim != 1:
        raise ShapeError(f"dilated_causal_conv1d: expected a 1-D sequence, got {h.shape}")
    out = conv1d(h.reshape((1, h.shape[0])), f.reshape((1, 1, f.shape[0])), dilation, "causal")
    return out.reshape((h.shape[0],))


# =============================================================================
# GRADIENT CHECK
# =============================================================================


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> float:
    """
    Compare analytic gradients with central finite differences.

    Args:
        fn: Zero-argument closure computing a scalar loss from `inputs`
        inputs: Leaf tensors to perturb in place
        eps: Finite-difference step

    Returns:
        Worst norm-wise relative error ||g_a - g_n|| / max(||g_a||, ||g_n||) over inputs
    """
    for t in inputs:
        t.grad = None
    fn().backward()

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        with no_grad():
            for idx in range(flat.size):
                original = flat[idx]
                flat[idx] = original + eps
                plus = fn().item()
                flat[idx] = original - eps
                minus = fn().item()
                flat[idx] = original
                numeric.reshape(-1)[idx] = (plus - minus) / (2.0 * eps)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        if scale < 1e-10:
            continue
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return worst
