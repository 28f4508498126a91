"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation is a :class:`Function` subclass with a
``forward`` over numpy arrays and a ``backward`` returning one gradient per
input.  Keeping the rules as classes (rather than closures) lets the gradient
checker and its tests address each rule by name.
"""

from __future__ import annotations

import contextlib
from typing import Iterator, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_BRANCH_TRACE: list | None = None


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new tensors (e.g. float64 for gradient checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def trace_branches() -> Iterator[list]:
    """Collect a fingerprint of every relu mask and argmax taken inside the block.

    Two evaluations with equal fingerprints lie on the same smooth piece of a
    piecewise-differentiable graph.
    """
    global _BRANCH_TRACE
    previous, _BRANCH_TRACE = _BRANCH_TRACE, []
    try:
        yield _BRANCH_TRACE
    finally:
        _BRANCH_TRACE = previous


def _record_branch(arr: np.ndarray) -> None:
    if _BRANCH_TRACE is not None:
        _BRANCH_TRACE.append(hash(np.ascontiguousarray(arr).tobytes()))


class Tensor:
    """N-dimensional float array with optional gradient and autodiff lineage."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, _ctx: "Function | None" = None,
                 _parents: tuple = ()):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._ctx = _ctx
        self._parents = _parents

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff ---------------------------------------------------------
    def backward(self) -> None:
        backward(self)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor division is only supported by a constant")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int, keepdims: bool = False):
        return max_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Parameter(Tensor):
    """A tracked leaf tensor carrying its own Adam moment buffers."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.data = np.array(self.data, copy=True)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def astype(self, dtype) -> None:
        """Convert value and optimizer state in place."""
        self.data = self.data.astype(dtype)
        self.adam_m = self.adam_m.astype(dtype)
        self.adam_v = self.adam_v.astype(dtype)
        if self.grad is not None:
            self.grad = self.grad.astype(dtype)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype})"


def _as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value)


class Function:
    """Base class for a differentiable operation."""

    name = "function"

    def __init__(self, **kwargs):
        self.kwargs = kwargs
        self.needs_input_grad: tuple[bool, ...] = ()

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(_as_tensor(x) for x in inputs)
        fn = cls(**kwargs)
        fn.needs_input_grad = tuple(t.requires_grad for t in tensors)
        out = fn.forward(*(t.data for t in tensors))
        requires_grad = any(t.requires_grad for t in tensors)
        if requires_grad:
            return Tensor(out, requires_grad=True, _ctx=fn, _parents=tensors)
        return Tensor(out)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every tracked leaf.

    Intermediate gradients live only for the duration of the pass, so calling
    this twice without clearing leaf gradients adds the two results.
    """
    if root.data.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward called on a tensor that does not require grad")

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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._ctx is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._ctx.backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise and shape operations
# ---------------------------------------------------------------------------


class Add(Function):
    name = "add"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class ReLU(Function):
    name = "relu"

    def forward(self, a):
        self.mask = a > 0
        _record_branch(self.mask)
        return np.where(self.mask, a, 0).astype(a.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(a.dtype)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        self.out = _sigmoid(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class Softmax(Function):
    name = "softmax"

    def forward(self, a):
        axis = self.kwargs["axis"]
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        axis = self.kwargs["axis"]
        s = self.out
        return (s * (grad - (grad * s).sum(axis=axis, keepdims=True)),)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays):
        axis = self.kwargs["axis"]
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        axis = self.kwargs["axis"]
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=axis))


class Reshape(Function):
    name = "reshape"

    def forward(self, a):
        self.in_shape = a.shape
        return a.reshape(self.kwargs["shape"])

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, a):
        return np.ascontiguousarray(np.transpose(a, self.kwargs["axes"]))

    def backward(self, grad):
        inverse = np.argsort(self.kwargs["axes"])
        return (np.ascontiguousarray(np.transpose(grad, inverse)),)


class Sum(Function):
    name = "sum"

    def forward(self, a):
        self.in_shape = a.shape
        return np.asarray(a.sum(axis=self.kwargs["axis"], keepdims=self.kwargs["keepdims"]))

    def backward(self, grad):
        axis = self.kwargs["axis"]
        if not self.kwargs["keepdims"] and axis is not None:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Sum):
    name = "mean"

    def forward(self, a):
        out = super().forward(a)
        self.count = a.size // max(out.size, 1)
        return (out / self.count).astype(a.dtype)

    def backward(self, grad):
        (g,) = super().backward(grad)
        return (g / self.count,)


class Max(Function):
    """Maximum along one axis; the gradient goes to the first maximizer."""

    name = "max"

    def forward(self, a):
        axis = self.kwargs["axis"]
        self.in_shape = a.shape
        self.idx = np.expand_dims(a.argmax(axis=axis), axis)
        _record_branch(self.idx)
        out = np.take_along_axis(a, self.idx, axis=axis)
        return out if self.kwargs["keepdims"] else np.squeeze(out, axis=axis)

    def backward(self, grad):
        axis = self.kwargs["axis"]
        if not self.kwargs["keepdims"]:
            grad = np.expand_dims(grad, axis)
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        np.put_along_axis(out, self.idx, grad, axis=axis)
        return (out,)


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.a, self.b
        ga = np.matmul(grad, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), grad)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Linear(Function):
    """``x @ W.T + b`` over the last axis of ``x``."""

    name = "linear"

    def forward(self, x, w, b):
        if x.shape[-1] != w.shape[1]:
            raise ValueError(f"linear: input features {x.shape} do not match weight {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"linear: bias {b.shape} does not match weight {w.shape}")
        self.x, self.w = x, w
        return x @ w.T + b

    def backward(self, grad):
        g2 = grad.reshape(-1, grad.shape[-1])
        x2 = self.x.reshape(-1, self.x.shape[-1])
        return grad @ self.w, g2.T @ x2, g2.sum(axis=0)


class CrossEntropy(Function):
    name = "cross_entropy"

    def forward(self, logits):
        labels = self.kwargs["labels"]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logsumexp
        self.probs = np.exp(logp)
        n = logits.shape[0]
        return np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    def backward(self, grad):
        labels = self.kwargs["labels"]
        n = self.probs.shape[0]
        g = self.probs.copy()
        g[np.arange(n), labels] -= 1
        return (g * (grad / n),)


# ---------------------------------------------------------------------------
# volumetric kernels
# ---------------------------------------------------------------------------


def _out_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise ValueError(f"expected 3 values, got {v!r}")
        return tuple(int(x) for x in v)
    return (int(v),) * 3


def _im2col(xp: np.ndarray, kernel: tuple[int, int, int], stride: int,
            out_dims: tuple[int, int, int]) -> np.ndarray:
    """Gather windows of a padded [N, C, D, H, W] array into a [C*kD*kH*kW, N*D'*H'*W'] matrix."""
    n, c = xp.shape[:2]
    kd, kh, kw = kernel
    od, oh, ow = out_dims
    s = stride
    cols = np.empty((c, kd, kh, kw, n, od, oh, ow), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3, 4)
    for a in range(kd):
        for b in range(kh):
            for e in range(kw):
                cols[:, a, b, e] = xt[:, :, a:a + s * od:s, b:b + s * oh:s, e:e + s * ow:s]
    return cols.reshape(c * kd * kh * kw, n * od * oh * ow)


class Conv3d(Function):
    """3D cross-correlation via window gathering (im2col) and a single GEMM."""

    name = "conv3d"

    def forward(self, x, w, b):
        stride, padding = self.kwargs["stride"], self.kwargs["padding"]
        if x.ndim != 5 or w.ndim != 5:
            raise ValueError(f"conv3d expects 5-D input and weight, got {x.shape} and {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise ValueError(f"conv3d channel mismatch: input {x.shape} vs weight {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"conv3d bias {b.shape} does not match weight {w.shape}")
        if stride < 1 or padding < 0:
            raise ValueError(f"conv3d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
        n, c, d, h, wd = x.shape
        o, _, kd, kh, kw = w.shape
        od, oh, ow = (_out_extent(d, kd, stride, padding), _out_extent(h, kh, stride, padding),
                      _out_extent(wd, kw, stride, padding))
        if min(od, oh, ow) < 1:
            raise ValueError(f"conv3d output extent non-positive for input {x.shape} and weight {w.shape}")
        if padding:
            x = np.pad(x, ((0, 0), (0, 0), (padding,) * 2, (padding,) * 2, (padding,) * 2))
        self.in_shape = (n, c, d, h, wd)
        self.padded_shape = x.shape
        self.out_dims = (od, oh, ow)
        self.cols = _im2col(x, (kd, kh, kw), stride, self.out_dims)
        self.w = w
        out = w.reshape(o, -1) @ self.cols + b[:, None]
        return np.ascontiguousarray(out.reshape(o, n, od, oh, ow).transpose(1, 0, 2, 3, 4))

    def backward(self, grad):
        stride, padding = self.kwargs["stride"], self.kwargs["padding"]
        n, c = self.in_shape[:2]
        o, _, kd, kh, kw = self.w.shape
        od, oh, ow = self.out_dims
        g2 = grad.transpose(1, 0, 2, 3, 4).reshape(o, -1)
        gw = (g2 @ self.cols.T).reshape(self.w.shape)
        gb = g2.sum(axis=1)
        if self.needs_input_grad and not self.needs_input_grad[0]:
            return None, gw, gb
        if stride == 1 and padding <= min(kd, kh, kw) - 1:
            # stride-1 input gradient is a correlation of the padded output
            # gradient with the flipped, channel-swapped kernel
            q = [k - 1 - padding for k in (kd, kh, kw)]
            gp = np.pad(grad, ((0, 0), (0, 0), (q[0],) * 2, (q[1],) * 2, (q[2],) * 2))
            wf = np.ascontiguousarray(self.w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)).reshape(c, -1)
            d, h, wd = self.in_shape[2:]
            gx = wf @ _im2col(gp, (kd, kh, kw), 1, (d, h, wd))
            return np.ascontiguousarray(gx.reshape(c, n, d, h, wd).transpose(1, 0, 2, 3, 4)), gw, gb
        s = stride
        gcols = (self.w.reshape(o, -1).T @ g2).reshape(c, kd, kh, kw, n, od, oh, ow)
        gx = np.zeros((c, n) + self.padded_shape[2:], dtype=grad.dtype)
        for a in range(kd):
            for bb in range(kh):
                for cc in range(kw):
                    gx[:, :, a:a + s * od:s, bb:bb + s * oh:s, cc:cc + s * ow:s] += gcols[:, a, bb, cc]
        gx = gx.transpose(1, 0, 2, 3, 4)
        if padding:
            p = padding
            gx = gx[:, :, p:-p, p:-p, p:-p]
        return np.ascontiguousarray(gx), gw, gb


def conv3d_reference(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1,
                     padding: int = 0) -> np.ndarray:
    """Naive nested-loop convolution used as a test oracle."""
    n, c, d, h, wd = x.shape
    o, _, kd, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding,) * 2, (padding,) * 2, (padding,) * 2))
    od, oh, ow = (_out_extent(d, kd, stride, padding), _out_extent(h, kh, stride, padding),
                  _out_extent(wd, kw, stride, padding))
    out = np.zeros((n, o, od, oh, ow), dtype=np.float64)
    for i in range(n):
        for oc in range(o):
            for z in range(od):
                for y in range(oh):
                    for xx in range(ow):
                        acc = float(b[oc])
                        for ic in range(c):
                            for a in range(kd):
                                for bb in range(kh):
                                    for cc in range(kw):
                                        acc += (w[oc, ic, a, bb, cc]
                                                * xp[i, ic, z * stride + a, y * stride + bb, xx * stride + cc])
                        out[i, oc, z, y, xx] = acc
    return out


class Pool3d(Function):
    name = "pool3d"

    def forward(self, x):
        kind = self.kwargs["kind"]
        kd, kh, kw = self.kwargs["kernel"]
        sd, sh, sw = self.kwargs["stride"]
        n, c, d, h, w = x.shape
        if kd > d or kh > h or kw > w:
            raise ValueError(f"pool kernel {(kd, kh, kw)} exceeds spatial extent {(d, h, w)}")
        od, oh, ow = (d - kd) // sd + 1, (h - kh) // sh + 1, (w - kw) // sw + 1
        self.geom = (x.shape, od, oh, ow)
        slices = [x[:, :, a:a + sd * od:sd, b:b + sh * oh:sh, e:e + sw * ow:sw]
                  for a in range(kd) for b in range(kh) for e in range(kw)]
        if kind == "avg":
            out = slices[0].copy()
            for sl in slices[1:]:
                out += sl
            return out / (kd * kh * kw)
        stacked = np.stack(slices, axis=0)
        self.argmax = stacked.argmax(axis=0)
        _record_branch(self.argmax)
        return np.take_along_axis(stacked, self.argmax[None], axis=0)[0]

    def backward(self, grad):
        kind = self.kwargs["kind"]
        kd, kh, kw = self.kwargs["kernel"]
        sd, sh, sw = self.kwargs["stride"]
        in_shape, od, oh, ow = self.geom
        gx = np.zeros(in_shape, dtype=grad.dtype)
        k = 0
        for a in range(kd):
            for b in range(kh):
                for e in range(kw):
                    if kind == "avg":
                        contrib = grad / (kd * kh * kw)
                    else:
                        contrib = grad * (self.argmax == k)
                    gx[:, :, a:a + sd * od:sd, b:b + sh * oh:sh, e:e + sw * ow:sw] += contrib
                    k += 1
        return (gx,)


class Upsample3d(Function):
    name = "upsample3d"

    def forward(self, x):
        f = self.kwargs["factor"]
        out = x
        for axis in (2, 3, 4):
            out = np.repeat(out, f, axis=axis)
        return out

    def backward(self, grad):
        f = self.kwargs["factor"]
        n, c, d, h, w = grad.shape
        g = grad.reshape(n, c, d // f, f, h // f, f, w // f, f).sum(axis=(3, 5, 7))
        return (g,)


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = _as_tensor(b, a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    _check_broadcast(a, b, "add")
    return Add.apply(a, b)


def mul(a, b) -> Tensor:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = _as_tensor(b, a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    _check_broadcast(a, b, "mul")
    return Mul.apply(a, b)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def relu(a: Tensor) -> Tensor:
    return ReLU.apply(a)


def sigmoid(a: Tensor) -> Tensor:
    return Sigmoid.apply(a)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {a.shape}")
    return Softmax.apply(a, axis=axis)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(x != y for i, (x, y) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ValueError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    return Concat.apply(*tensors, axis=axis)


def reshape(a: Tensor, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: Tensor, axes) -> Tensor:
    return Transpose.apply(a, axes=tuple(axes))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(a, axis=axis, keepdims=keepdims)


def max_(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return Max.apply(a, axis=axis, keepdims=keepdims)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Linear.apply(x, weight, bias)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of binary ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ValueError(f"cross_entropy expects logits of shape [N, 2], got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels for {logits.shape[0]} rows")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError(f"cross_entropy labels must be 0 or 1, got {sorted(set(labels.tolist()))}")
    return CrossEntropy.apply(logits, labels=labels.astype(np.int64))


def conv3d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv3d.apply(x, weight, bias, stride=int(stride), padding=int(padding))


def pool3d(x: Tensor, kind: str, kernel, stride=None) -> Tensor:
    if kind not in ("avg", "max"):
        raise ValueError(f"pool kind must be 'avg' or 'max', got {kind!r}")
    if x.ndim != 5:
        raise ValueError(f"pool3d expects a 5-D input, got {x.shape}")
    kernel = _triple(kernel)
    stride = _triple(stride if stride is not None else kernel)
    if min(stride) < 1 or min(kernel) < 1:
        raise ValueError(f"pool kernel and stride must be positive, got {kernel}, {stride}")
    return Pool3d.apply(x, kind=kind, kernel=kernel, stride=stride)


def global_pool3d(x: Tensor, kind: str) -> Tensor:
    """Reduce all spatial dims to 1 by averaging or taking the maximum."""
    n, c = x.shape[:2]
    flat = reshape(x, (n, c, -1))
    if kind == "avg":
        pooled = mean(flat, axis=2, keepdims=True)
    elif kind == "max":
        pooled = max_(flat, axis=2, keepdims=True)
    else:
        raise ValueError(f"pool kind must be 'avg' or 'max', got {kind!r}")
    return reshape(pooled, (n, c, 1, 1, 1))


def upsample3d(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.ndim != 5:
        raise ValueError(f"upsample3d expects a 5-D input, got {x.shape}")
    return Upsample3d.apply(x, factor=int(factor))
