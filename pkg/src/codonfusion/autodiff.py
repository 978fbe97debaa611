"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors wrap float64 numpy arrays and record the operations that produced
them. Calling ``backward()`` on a scalar result walks the recorded graph in
reverse topological order and accumulates gradients into every reachable
tensor with ``requires_grad`` set. Gradients accumulate additively; call
``zero_grads`` between backward passes.

Only the operators needed by the fusion pipeline are implemented. There is
no broadcasting beyond what those operators require and no GPU path.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "OP_KINDS",
    "primitive_forward",
    "zero_grads",
    "matmul",
    "add",
    "mul",
    "scale",
    "concat_feature",
    "concat_time",
    "tanh",
    "sigmoid",
    "relu",
    "softmax_over_axis",
    "log",
    "mean_over_axis",
    "sum_over_axis",
    "conv1d",
    "conv_transpose1d",
    "avg_pool1d",
    "global_max_pool",
    "layer_norm",
    "dropout",
    "embedding_slice",
    "grad_check",
    "GradCheckReport",
    "Linear",
]


class ShapeError(ValueError):
    """Raised when operands do not conform to an operator's shape law."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class NonFiniteError(FloatingPointError):
    """Raised when an operation encounters NaN or infinity where it must not."""

    def __init__(self, op: str, message: str = "non-finite values encountered"):
        super().__init__(f"{op}: {message}")
        self.op = op


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return np.ascontiguousarray(arr)


class Tensor:
    """A dense float64 array participating in a reverse-mode gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        tag = self.name or self._op
        return f"Tensor(shape={self.shape}, op={tag}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", f"expected a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all requires_grad ancestors."""
        if self.data.size != 1:
            raise ShapeError("backward", f"loss must be scalar, got shape {self.shape}")
        order = _toposort(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; constants are lifted to non-grad tensors.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def log(self):
        return log(self)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_over_axis(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean_over_axis(self, axis=axis, keepdims=keepdims)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS; parent order is fixed, so the ordering is deterministic
    # for a given graph and each node is visited exactly once.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str, backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._op = op
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", f"cannot broadcast {a.shape} with {b.shape}") from None

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad, b.shape))

    return _make(data, (a, b), "add", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", f"cannot broadcast {a.shape} with {b.shape}") from None

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad * a.data, b.shape))

    return _make(data, (a, b), "mul", backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    data = a.data * factor

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * factor)

    return _make(data, (a,), "scale", backward)


def matmul(a: Tensor, b: Tensor, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    """Matrix product with optional operand transposes; 1-d operands follow numpy rules."""
    am = a.data.T if transpose_a else a.data
    bm = b.data.T if transpose_b else b.data
    try:
        data = am @ bm
    except ValueError:
        raise ShapeError(
            "matmul", f"shapes {a.shape} and {b.shape} do not conform "
            f"(transpose_a={transpose_a}, transpose_b={transpose_b})"
        ) from None

    def backward(grad):
        ga: np.ndarray
        gb: np.ndarray
        if am.ndim == 1 and bm.ndim == 1:
            ga, gb = grad * bm, grad * am
        elif am.ndim == 1:
            ga, gb = grad @ bm.T, np.outer(am, grad)
        elif bm.ndim == 1:
            ga, gb = np.outer(grad, bm), am.T @ grad
        else:
            ga, gb = grad @ bm.T, am.T @ grad
        if a.requires_grad:
            a._accumulate(ga.T if transpose_a else ga)
        if b.requires_grad:
            b._accumulate(gb.T if transpose_b else gb)

    return _make(data, (a, b), "matmul", backward)


def concat_feature(tensors) -> Tensor:
    """Concatenate along the last (feature) axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_feature", "need at least one input")
    lead = [t.shape[:-1] for t in tensors]
    if any(l != lead[0] for l in lead):
        raise ShapeError("concat_feature", f"leading extents differ: {[t.shape for t in tensors]}")
    data = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.shape[-1] for t in tensors]

    def backward(grad):
        offset = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                t._accumulate(grad[..., offset:offset + w])
            offset += w

    return _make(data, tuple(tensors), "concat_feature", backward)


def concat_time(tensors) -> Tensor:
    """Concatenate along the first (time) axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_time", "need at least one input")
    trail = [t.shape[1:] for t in tensors]
    if any(s != trail[0] for s in trail):
        raise ShapeError("concat_time", f"trailing extents differ: {[t.shape for t in tensors]}")
    data = np.concatenate([t.data for t in tensors], axis=0)
    lengths = [t.shape[0] for t in tensors]

    def backward(grad):
        offset = 0
        for t, n in zip(tensors, lengths):
            if t.requires_grad:
                t._accumulate(grad[offset:offset + n])
            offset += n

    return _make(data, tuple(tensors), "concat_time", backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * (1.0 - data * data))

    return _make(data, (a,), "tanh", backward)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to stay stable for large |x|.
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * data * (1.0 - data))

    return _make(data, (a,), "sigmoid", backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * (a.data > 0))

    return _make(data, (a,), "relu", backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad / a.data)

    return _make(data, (a,), "log", backward)


def softmax_over_axis(a: Tensor, axis: int = -1, temperature: Tensor | float | None = None) -> Tensor:
    """Softmax along ``axis``; logits are divided by ``temperature`` first.

    The temperature may be a learnable scalar tensor, in which case it
    receives a gradient, or a plain positive float.
    """
    if a.shape[axis] == 0:
        raise ShapeError("softmax_over_axis", f"axis {axis} of shape {a.shape} has extent 0")
    temp_tensor = temperature if isinstance(temperature, Tensor) else None
    if temp_tensor is not None:
        if temp_tensor.size != 1:
            raise ShapeError("softmax_over_axis", f"temperature must be scalar, got {temp_tensor.shape}")
        tau = float(temp_tensor.data.reshape(()))
    else:
        tau = 1.0 if temperature is None else float(temperature)
    if tau <= 0:
        raise ShapeError("softmax_over_axis", f"temperature must be positive, got {tau}")

    z = a.data / tau
    zmax = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - zmax)
    denom = e.sum(axis=axis, keepdims=True)
    data = e / denom

    parents = (a,) if temp_tensor is None else (a, temp_tensor)

    def backward(grad):
        inner = (grad * data).sum(axis=axis, keepdims=True)
        gz = data * (grad - inner)
        if a.requires_grad:
            a._accumulate(gz / tau)
        if temp_tensor is not None and temp_tensor.requires_grad:
            # z = x / tau, so dz/dtau = -x / tau^2. -inf logits carry zero
            # probability and zero gz; mask them out of the reduction.
            contrib = np.where(gz == 0.0, 0.0, gz * a.data)
            temp_tensor._accumulate(
                np.full(temp_tensor.shape, -contrib.sum() / (tau * tau))
            )

    return _make(data, parents, "softmax_over_axis", backward)


def sum_over_axis(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(grad):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.full(a.shape, grad if np.ndim(grad) == 0 else grad.reshape(())))
        else:
            g = grad if keepdims else np.expand_dims(grad, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), "sum_over_axis", backward)


def mean_over_axis(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("mean_over_axis", f"axis {axis} of shape {a.shape} has extent 0")
    return scale(sum_over_axis(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# structured sequence primitives (time-major: input rows are positions)
# ---------------------------------------------------------------------------


def _check_2d(op: str, t: Tensor, role: str) -> None:
    if t.data.ndim != 2:
        raise ShapeError(op, f"{role} must be 2-d (positions x features), got {t.shape}")


def conv1d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-d convolution over positions; weight is (out_channels, in_channels, k)."""
    _check_2d("conv1d", x, "input")
    if weight.data.ndim != 3:
        raise ShapeError("conv1d", f"weight must be (out, in, k), got {weight.shape}")
    t_in, c_in = x.shape
    c_out, c_in_w, k = weight.shape
    if c_in_w != c_in:
        raise ShapeError("conv1d", f"input channels {c_in} != weight channels {c_in_w}")
    t_out = (t_in + 2 * padding - k) // stride + 1
    if t_out < 1:
        raise ShapeError("conv1d", f"kernel {k} with stride {stride}, padding {padding} "
                                   f"does not fit length {t_in}")

    xp = np.pad(x.data, ((padding, padding), (0, 0))) if padding else x.data
    data = np.zeros((t_out, c_out))
    for j in range(k):
        # rows j, j+stride, ... of the padded input hit kernel tap j
        data += xp[j:j + stride * t_out:stride] @ weight.data[:, :, j].T

    def backward(grad):
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for j in range(k):
                gw[:, :, j] = grad.T @ xp[j:j + stride * t_out:stride]
            weight._accumulate(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[j:j + stride * t_out:stride] += grad @ weight.data[:, :, j]
            x._accumulate(gxp[padding:padding + t_in] if padding else gxp)

    return _make(data, (x, weight), "conv1d", backward)


def conv_transpose1d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 1-d convolution; weight is (in_channels, out_channels, k).

    The forward map is the adjoint of ``conv1d`` with the same kernel,
    stride and padding: output length (t_in - 1) * stride + k - 2 * padding.
    """
    _check_2d("conv_transpose1d", x, "input")
    if weight.data.ndim != 3:
        raise ShapeError("conv_transpose1d", f"weight must be (in, out, k), got {weight.shape}")
    t_in, c_in = x.shape
    c_in_w, c_out, k = weight.shape
    if c_in_w != c_in:
        raise ShapeError("conv_transpose1d", f"input channels {c_in} != weight channels {c_in_w}")
    t_full = (t_in - 1) * stride + k
    t_out = t_full - 2 * padding
    if t_out < 1:
        raise ShapeError("conv_transpose1d", f"padding {padding} leaves no output "
                                             f"(full length {t_full})")

    full = np.zeros((t_full, c_out))
    for j in range(k):
        full[j:j + stride * t_in:stride] += x.data @ weight.data[:, :, j]
    data = full[padding:padding + t_out].copy()

    def backward(grad):
        gfull = np.zeros((t_full, c_out))
        gfull[padding:padding + t_out] = grad
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx += gfull[j:j + stride * t_in:stride] @ weight.data[:, :, j].T
            x._accumulate(gx)
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for j in range(k):
                gw[:, :, j] = x.data.T @ gfull[j:j + stride * t_in:stride]
            weight._accumulate(gw)

    return _make(data, (x, weight), "conv_transpose1d", backward)


def avg_pool1d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Mean over windows of ``kernel`` positions; trailing remainder is dropped."""
    _check_2d("avg_pool1d", x, "input")
    stride = kernel if stride is None else stride
    t_in, c = x.shape
    if t_in < kernel:
        raise ShapeError("avg_pool1d", f"kernel {kernel} does not fit length {t_in}")
    t_out = (t_in - kernel) // stride + 1
    data = np.zeros((t_out, c))
    for j in range(kernel):
        data += x.data[j:j + stride * t_out:stride]
    data /= kernel

    def backward(grad):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j in range(kernel):
                gx[j:j + stride * t_out:stride] += grad
            x._accumulate(gx / kernel)

    return _make(data, (x,), "avg_pool1d", backward)


def global_max_pool(x: Tensor) -> Tensor:
    """Max over positions; gradient routes to the first maximal position."""
    _check_2d("global_max_pool", x, "input")
    idx = np.argmax(x.data, axis=0)
    data = x.data[idx, np.arange(x.shape[1])]

    def backward(grad):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[idx, np.arange(x.shape[1])] = grad
            x._accumulate(gx)

    return _make(data, (x,), "global_max_pool", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the feature (last) axis to mean 0, variance 1, then apply affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", f"affine params must be ({d},), got {gain.shape}, {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def backward(grad):
        if gain.requires_grad:
            gain._accumulate((grad * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(grad.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = grad * gain.data
            # d xhat / d x through mean and variance of the row
            term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv)

    return _make(data, (x, gain, bias), "layer_norm", backward)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales kept values by 1/keep at train time, identity at eval."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError("dropout", f"rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        data = x.data.copy()

        def backward_id(grad):
            if x.requires_grad:
                x._accumulate(grad)

        return _make(data, (x,), "dropout", backward_id)

    if rng is None:
        raise ShapeError("dropout", "training-mode dropout needs an explicit rng")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    data = x.data * mask

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * mask)

    return _make(data, (x,), "dropout", backward)


def embedding_slice(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice along ``axis``; gradient scatters back into the slice."""
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError("embedding_slice", f"slice [{start}:{stop}] out of range for extent {n}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = x.data[index].copy()

    def backward(grad):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[index] = grad
            x._accumulate(gx)

    return _make(data, (x,), "embedding_slice", backward)


# ---------------------------------------------------------------------------
# uniform dispatch surface
# ---------------------------------------------------------------------------

OP_KINDS = frozenset({
    "matmul", "add", "mul", "scale", "concat_feature", "concat_time",
    "tanh", "sigmoid", "relu", "softmax_over_axis", "log",
    "mean_over_axis", "sum_over_axis", "conv1d", "conv_transpose1d",
    "avg_pool1d", "global_max_pool", "layer_norm", "dropout", "embedding_slice",
})


def primitive_forward(op_kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Apply one named primitive to ``inputs`` with keyword ``attrs``.

    All primitives are also exposed as plain functions; this dispatcher is
    the uniform surface used by shape-law and gradient sweeps.
    """
    attrs = dict(attrs or {})
    inputs = list(inputs)
    if op_kind not in OP_KINDS:
        raise ShapeError(op_kind, f"unknown op kind; expected one of {sorted(OP_KINDS)}")
    if op_kind in ("concat_feature", "concat_time"):
        return {"concat_feature": concat_feature, "concat_time": concat_time}[op_kind](inputs)
    fn = globals()[op_kind]
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


class GradCheckReport:
    """Per-parameter max relative error between tape and central differences."""

    def __init__(self, errors: dict[str, float], tol: float):
        self.errors = errors
        self.tol = tol

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def __repr__(self):
        worst = max(self.errors, key=self.errors.get) if self.errors else "-"
        return (f"GradCheckReport(passed={self.passed}, max_error={self.max_error:.3e}, "
                f"worst={worst}, tol={self.tol:.0e})")


def grad_check(build_loss, params: dict[str, Tensor], eps: float = 1e-5,
               tol: float = 1e-4, max_coords: int = 200,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare tape gradients of ``build_loss()`` against central differences.

    ``build_loss`` must rebuild the graph from the current parameter values
    and be deterministic (dropout disabled or its mask seed frozen). At most
    ``max_coords`` coordinates are sampled per parameter. The error at a
    coordinate is |g_tape - g_fd| / max(1, |g_tape|, |g_fd|), i.e. relative
    for large gradients and absolute near zero.
    """
    rng = rng or np.random.default_rng(0)
    zero_grads(params.values())
    loss = build_loss()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("grad_check", "loss is non-finite")
    loss.backward()
    tape_grads = {}
    for name, p in params.items():
        if p.grad is None:
            raise NonFiniteError("grad_check", f"parameter {name} received no gradient")
        if not np.isfinite(p.grad).all():
            raise NonFiniteError("grad_check", f"gradient of {name} is non-finite")
        tape_grads[name] = p.grad.copy()

    errors: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, size=max_coords, replace=False))
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = build_loss().item()
            flat[i] = orig - eps
            lo = build_loss().item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteError("grad_check", f"finite-difference probe of {name} is non-finite")
            fd = (hi - lo) / (2.0 * eps)
            g = tape_grads[name].reshape(-1)[i]
            err = abs(g - fd) / max(1.0, abs(g), abs(fd))
            worst = max(worst, err)
        errors[name] = worst
    return GradCheckReport(errors, tol)


class Linear:
    """Affine map y = x @ W^T + b with fan-in uniform initialization."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, name: str, bias: bool = True):
        bound = 1.0 / np.sqrt(d_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(d_out, d_in)),
                             requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(rng.uniform(-bound, bound, size=(d_out,)) if bias else np.zeros(d_out),
                           requires_grad=bias, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight, transpose_b=True), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias] if self.bias.requires_grad else [self.weight]
