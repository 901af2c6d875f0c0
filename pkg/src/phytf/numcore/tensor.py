"""Dense float64 tensors with taped reverse-mode differentiation.

Every op records its parents and a backward rule on the output tensor; the
graph is therefore implicit, acyclic by construction, and each backward rule
consumes only values captured at forward time. ``backward`` replays the
records in reverse topological order. All payloads are float64 numpy arrays
and all kernels are plain numpy, so repeated forward+backward passes on
identical inputs are bitwise reproducible.

Optimizers mutate parameter data in place, outside the graph; differentiating
through an optimizer step is not supported.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DegenerateInputError, DimensionError

Array = np.ndarray


def _f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 array plus an optional gradient buffer and graph record."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _f64(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction ----------------------------------------------------

    @staticmethod
    def _op(data: Array, parents: tuple["Tensor", ...], grad_fn) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        if any(p.requires_grad or p._backward is not None for p in parents):
            out.requires_grad = False
            out._parents = parents
            out._backward = grad_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- bookkeeping -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:  # pragma: no cover
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor with requires_grad set.

    ``loss`` must be a scalar. Calling twice without ``zero_grad`` accumulates.
    Tensors the loss does not depend on are left untouched (grad stays None,
    i.e. exactly zero).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    # Deterministic reverse topological order via iterative post-order DFS.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            topo.append(node)
            continue
        if id(node) in seen or node._backward is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent._backward is not None and id(parent) not in seen:
                stack.append((parent, False))

    flow: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss._backward is None and loss.requires_grad:
        leaves[id(loss)] = loss

    def _owned(g: Array, out_grad: Array) -> Array:
        # Stored flow buffers must own their memory: a view or the output
        # gradient itself would alias another tensor's accumulator.
        if g is out_grad or g.base is not None or not g.flags.owndata:
            return g.copy()
        return g

    for node in reversed(topo):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            if parent._backward is None:
                if not parent.requires_grad:
                    continue
                leaves[id(parent)] = parent
            cur = flow.get(id(parent))
            if cur is None:
                flow[id(parent)] = _owned(pg, g)
            else:
                cur += pg

    for lid, leaf in leaves.items():
        g = flow.get(lid)
        if g is None:
            continue
        leaf.grad = g if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        c = _f64(b)
        return Tensor._op(a.data + c, (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(b, a)
    data = a.data + b.data
    sa, sb = a.data.shape, b.data.shape
    return Tensor._op(data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        c = _f64(b)
        return Tensor._op(a.data - c, (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        c = _f64(a)
        return Tensor._op(c - b.data, (b,), lambda g: (-g,))
    data = a.data - b.data
    sa, sb = a.data.shape, b.data.shape
    return Tensor._op(data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        c = _f64(b)
        return Tensor._op(a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.data.shape),))
    if not isinstance(a, Tensor):
        return mul(b, a)
    da, db = a.data, b.data
    return Tensor._op(
        da * db,
        (a, b),
        lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)),
    )


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / _f64(b))
    if not isinstance(a, Tensor):
        c = _f64(a)
        db = b.data
        return Tensor._op(c / db, (b,), lambda g: (_unbroadcast(-g * c / (db * db), db.shape),))
    da, db = a.data, b.data
    return Tensor._op(
        da / db,
        (a, b),
        lambda g: (
            _unbroadcast(g / db, da.shape),
            _unbroadcast(-g * da / (db * db), db.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return Tensor._op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    da = a.data
    out = da**p
    return Tensor._op(out, (a,), lambda g: (g * p * da ** (p - 1.0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    da = a.data
    return Tensor._op(np.log(da), (a,), lambda g: (g / da,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._op(out, (a,), lambda g: (g / (2.0 * out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor._op(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes through inside the range."""
    da = a.data
    out = np.clip(da, lo, hi)
    inside = ((da >= lo) & (da <= hi)).astype(np.float64)
    return Tensor._op(out, (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape
    return Tensor._op(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("transpose expects a rank-2 tensor")
    return Tensor._op(a.data.T, (a,), lambda g: (g.T,))


def getitem(a: Tensor, key) -> Tensor:
    data = a.data[key]
    shape = a.data.shape

    def grad_fn(g):
        gx = np.zeros(shape)
        gx[key] = g
        return (gx,)

    return Tensor._op(data, (a,), grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise DegenerateInputError("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i] : offsets[i + 1]], 0, axis) for i in range(len(parts))
        )

    return Tensor._op(data, tuple(parts), grad_fn)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axes, ndim: int):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def reduce_sum(a: Tensor, axes=None) -> Tensor:
    ax = _norm_axes(axes, a.data.ndim)
    shape = a.data.shape
    data = a.data.sum(axis=ax)

    def grad_fn(g):
        gk = np.expand_dims(g, ax) if g.ndim != len(shape) else g
        return (np.broadcast_to(gk, shape),)

    return Tensor._op(data, (a,), grad_fn)


def reduce_mean(a: Tensor, axes=None) -> Tensor:
    """Arithmetic mean over the named axes (all axes when None)."""
    ax = _norm_axes(axes, a.data.ndim)
    shape = a.data.shape
    count = 1
    for i in ax:
        count *= shape[i]
    if count == 0:
        raise DegenerateInputError("reduce_mean over an empty extent")
    data = a.data.mean(axis=ax)
    inv = 1.0 / count

    def grad_fn(g):
        gk = np.expand_dims(g, ax) if g.ndim != len(shape) else g
        return (np.broadcast_to(gk * inv, shape),)

    return Tensor._op(data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects rank-2 tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
        )
    da, db = a.data, b.data
    return Tensor._op(da @ db, (a, b), lambda g: (g @ db.T, da.T @ g))


# ---------------------------------------------------------------------------
# fused network ops
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(d.ndim - 1))

    def grad_fn(g):
        dgain = (g * xhat).sum(axis=lead) if lead else (g * xhat).copy()
        dbias = g.sum(axis=lead) if lead else g.copy()
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return (dx, dgain, dbias)

    return Tensor._op(out, (x, gain, bias), grad_fn)


def masked_softmax(x: Tensor, keep: Array) -> Tensor:
    """Softmax over the last axis restricted to ``keep``; dropped entries are
    exactly zero in both the output and the gradient. Every row must keep at
    least one entry."""
    d = np.where(keep, x.data, -np.inf)
    m = d.max(axis=-1, keepdims=True)
    p = np.exp(d - m)
    p /= p.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return Tensor._op(p, (x,), grad_fn)


_CAUSAL_KEEP: dict[int, Array] = {}


def _causal_keep(n: int) -> Array:
    keep = _CAUSAL_KEEP.get(n)
    if keep is None:
        keep = np.tril(np.ones((n, n), dtype=bool))
        _CAUSAL_KEEP[n] = keep
    return keep


def causal_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int) -> Tensor:
    """Multi-head self-attention over [steps, width] with a strict causal mask.

    Attention weights for position i are exactly zero at positions > i, so
    outputs (and gradients) at a step cannot depend on later steps.
    """
    steps, width = q.data.shape
    if width % n_heads != 0:
        raise DimensionError(f"width {width} not divisible by {n_heads} heads")
    dh = width // n_heads
    scale = 1.0 / np.sqrt(dh)
    qh = q.data.reshape(steps, n_heads, dh)
    kh = k.data.reshape(steps, n_heads, dh)
    vh = v.data.reshape(steps, n_heads, dh)
    scores = np.einsum("ihd,jhd->hij", qh, kh, optimize=True) * scale
    keep = _causal_keep(steps)
    z = np.where(keep, scores, -np.inf)
    z -= z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    out = np.einsum("hij,jhd->ihd", p, vh, optimize=True).reshape(steps, width)

    def grad_fn(g):
        gh = g.reshape(steps, n_heads, dh)
        dp = np.einsum("ihd,jhd->hij", gh, vh, optimize=True)
        dv = np.einsum("hij,ihd->jhd", p, gh, optimize=True)
        inner = (dp * p).sum(axis=-1, keepdims=True)
        ds = p * (dp - inner)
        dq = np.einsum("hij,jhd->ihd", ds, kh, optimize=True) * scale
        dk = np.einsum("hij,ihd->jhd", ds, qh, optimize=True) * scale
        return (
            dq.reshape(steps, width),
            dk.reshape(steps, width),
            dv.reshape(steps, width),
        )

    return Tensor._op(out, (q, k, v), grad_fn)


def weighted_gather(x: Tensor, flat_idx: Array, weights: Array) -> Tensor:
    """out[i] = sum_k weights[i,k] * x.flat[flat_idx[i,k]] (idx/weights constant)."""
    flat_idx = np.asarray(flat_idx, dtype=np.intp)
    weights = _f64(weights)
    flat = x.data.reshape(-1)
    out = (flat[flat_idx] * weights).sum(axis=-1)
    shape = x.data.shape

    def grad_fn(g):
        gx = np.zeros(flat.shape)
        np.add.at(gx, flat_idx.reshape(-1), (g[:, None] * weights).reshape(-1))
        return (gx.reshape(shape),)

    return Tensor._op(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# padding and 3x3 convolution
# ---------------------------------------------------------------------------

_PAD_TAGS = ("periodic", "replicate", "zero", "dirichlet-lattice", "none")


def _pad_tag(mode):
    if isinstance(mode, str):
        tag, frame = mode, None
    else:
        tag, frame = mode.tag, getattr(mode, "frame", None)
    if tag not in _PAD_TAGS:
        raise DimensionError(f"unknown padding mode {tag!r}")
    return tag, frame


def _pad_forward(x: Array, tag: str, frame: Array | None) -> Array:
    h, w = x.shape[-2:]
    out = np.zeros(x.shape[:-2] + (h + 2, w + 2))
    out[..., 1:-1, 1:-1] = x
    if tag == "zero":
        return out
    if tag == "periodic":
        out[..., 0, 1:-1] = x[..., -1, :]
        out[..., -1, 1:-1] = x[..., 0, :]
        out[..., 1:-1, 0] = x[..., :, -1]
        out[..., 1:-1, -1] = x[..., :, 0]
        out[..., 0, 0] = x[..., -1, -1]
        out[..., 0, -1] = x[..., -1, 0]
        out[..., -1, 0] = x[..., 0, -1]
        out[..., -1, -1] = x[..., 0, 0]
        return out
    if tag == "replicate":
        out[..., 0, 1:-1] = x[..., 0, :]
        out[..., -1, 1:-1] = x[..., -1, :]
        out[..., 1:-1, 0] = x[..., :, 0]
        out[..., 1:-1, -1] = x[..., :, -1]
        out[..., 0, 0] = x[..., 0, 0]
        out[..., 0, -1] = x[..., 0, -1]
        out[..., -1, 0] = x[..., -1, 0]
        out[..., -1, -1] = x[..., -1, -1]
        return out
    # dirichlet-lattice: halo ring copied from the supplied frame
    if frame is None or frame.shape != (h + 2, w + 2):
        raise DimensionError(
            f"dirichlet-lattice frame must have shape {(h + 2, w + 2)}, "
            f"got {None if frame is None else frame.shape}"
        )
    out[..., 0, :] = frame[0, :]
    out[..., -1, :] = frame[-1, :]
    out[..., :, 0] = frame[:, 0]
    out[..., :, -1] = frame[:, -1]
    return out


def _pad_backward(g: Array, tag: str) -> Array:
    gx = g[..., 1:-1, 1:-1].copy()
    if tag in ("zero", "dirichlet-lattice"):
        return gx
    if tag == "periodic":
        gx[..., -1, :] += g[..., 0, 1:-1]
        gx[..., 0, :] += g[..., -1, 1:-1]
        gx[..., :, -1] += g[..., 1:-1, 0]
        gx[..., :, 0] += g[..., 1:-1, -1]
        gx[..., -1, -1] += g[..., 0, 0]
        gx[..., -1, 0] += g[..., 0, -1]
        gx[..., 0, -1] += g[..., -1, 0]
        gx[..., 0, 0] += g[..., -1, -1]
        return gx
    # replicate
    gx[..., 0, :] += g[..., 0, 1:-1]
    gx[..., -1, :] += g[..., -1, 1:-1]
    gx[..., :, 0] += g[..., 1:-1, 0]
    gx[..., :, -1] += g[..., 1:-1, -1]
    gx[..., 0, 0] += g[..., 0, 0]
    gx[..., 0, -1] += g[..., 0, -1]
    gx[..., -1, 0] += g[..., -1, 0]
    gx[..., -1, -1] += g[..., -1, -1]
    return gx


def pad2d(x: Tensor, mode) -> Tensor:
    """One-cell halo around the last two axes, filled per the padding mode."""
    tag, frame = _pad_tag(mode)
    if tag == "none":
        raise DimensionError("pad2d requires an actual padding mode")
    data = _pad_forward(x.data, tag, frame)
    return Tensor._op(data, (x,), lambda g: (_pad_backward(g, tag),))


def conv2d(field: Tensor, kernel: Tensor, padding="zero") -> Tensor:
    """3x3 cross-correlation over [..., c, h, w] with boundary padding.

    Output spatial size equals the input's, except h-2 x w-2 for "none".
    """
    field, kernel = as_tensor(field), as_tensor(kernel)
    kd = kernel.data
    if kd.ndim != 4 or kd.shape[2:] != (3, 3):
        raise DimensionError(f"kernel must be [c_out, c_in, 3, 3], got {kd.shape}")
    if field.data.ndim < 3:
        raise DimensionError(f"field must be [..., c, h, w], got {field.data.shape}")
    c_in = field.data.shape[-3]
    if kd.shape[1] != c_in:
        raise DimensionError(
            f"kernel expects {kd.shape[1]} input channels, field has {c_in}"
        )
    tag, frame = _pad_tag(padding)
    if tag == "none":
        padded = field.data
    else:
        padded = _pad_forward(field.data, tag, frame)
    hh, ww = padded.shape[-2] - 2, padded.shape[-1] - 2
    c_out = kd.shape[0]
    out = np.zeros(field.data.shape[:-3] + (c_out, hh, ww))
    for di in range(3):
        for dj in range(3):
            win = padded[..., :, di : di + hh, dj : dj + ww]
            out += np.einsum("oc,...chw->...ohw", kd[:, :, di, dj], win, optimize=True)

    need_kernel_grad = kernel.requires_grad or kernel._backward is not None

    def grad_fn(g):
        gpad = np.zeros(padded.shape)
        gk = np.zeros(kd.shape) if need_kernel_grad else None
        for di in range(3):
            for dj in range(3):
                gpad[..., :, di : di + hh, dj : dj + ww] += np.einsum(
                    "oc,...ohw->...chw", kd[:, :, di, dj], g, optimize=True
                )
                if gk is not None:
                    win = padded[..., :, di : di + hh, dj : dj + ww]
                    gk[:, :, di, dj] = np.einsum("...ohw,...chw->oc", g, win, optimize=True)
        gx = gpad if tag == "none" else _pad_backward(gpad, tag)
        return (gx, gk)

    return Tensor._op(out, (field, kernel), grad_fn)


def overwrite_cells(raw: Tensor, mask: Array, values: Array) -> Tensor:
    """Replace cells where ``mask`` is True by constant ``values``.

    Untouched cells keep their exact bits; gradients vanish on replaced cells.
    """
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, values, raw.data)
    inv = ~mask
    return Tensor._op(out, (raw,), lambda g: (g * inv,))
