"""Dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float32 for training, float64 for
gradient checking) and record a dynamic computation graph as operations run.
``backward`` walks that graph once in reverse topological order and
accumulates gradients into every reachable tensor that requires them.
Gradients keep accumulating across backward calls until explicitly zeroed.

Conventions baked in here, chosen once so every oracle agrees with the code:
  * conv2d uses cross-correlation (no kernel flip),
  * bilinear_resize uses the align-corners mapping
    src = out_index * (in - 1) / (out - 1),
  * max_pool2d breaks gradient ties by first occurrence in row-major order,
  * masked_cross_entropy averages over non-ignored pixels only.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import ShapeError, ValidationError

# Module-level switches. `_grad_enabled` suspends graph recording (inference,
# parameter updates); `_debug_checks` adds finiteness asserts on every forward.
_grad_enabled = True
_debug_checks = False


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def debug_checks(enabled=True):
    """Enable per-op finiteness checks (finite inputs must give finite outputs)."""
    global _debug_checks
    prev = _debug_checks
    _debug_checks = enabled
    try:
        yield
    finally:
        _debug_checks = prev


def _check_finite(arr, op_name):
    if _debug_checks and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{op_name}: non-finite values in output")


class Tensor:
    """N-dimensional array with optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- graph management ---------------------------------------------------

    def detach(self):
        """Graph cut: same data, no parents, no gradient flow."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._op = "detach"
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(tensor) into .grad of every reachable tensor.

        self must be scalar. Each graph node is visited exactly once; calling
        backward again on the same graph adds another full contribution.
        """
        if self.data.size != 1:
            raise ValidationError(
                f"backward: loss must be scalar, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            if node._backward is None:
                continue
            contribs = node._backward(g)
            for parent, pg in zip(node._parents, contribs):
                if pg is None:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def sum(self):
        return tensor_sum(self)


def _toposort(root):
    """Reverse-postorder over the recorded graph, restricted to grad-requiring nodes."""
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return topo


def _make(data, parents, backward, op):
    """Wrap a forward result, recording the graph edge if grad is live."""
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = requires
    out._op = op
    if requires:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    _check_finite(data, op)
    return out


def _same_dtype(op, *tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ValidationError(
                f"{op}: mixed dtypes {dt} and {t.data.dtype}; convert explicitly"
            )
    return dt


# ---------------------------------------------------------------------------
# Elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a, b):
    if not isinstance(b, Tensor):
        b = Tensor(np.full_like(a.data, b))
    _same_dtype("add", a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shape {a.data.shape} vs {b.data.shape}")

    def backward(g):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), backward, "add")


def mul(a, b):
    """Elementwise product; b may be a python scalar."""
    if not isinstance(b, Tensor):
        scale = float(b)

        def backward_s(g):
            return (g * scale,)

        return _make(a.data * scale, (a,), backward_s, "scale")
    _same_dtype("mul", a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shape {a.data.shape} vs {b.data.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        return (
            g * b_data if a.requires_grad else None,
            g * a_data if b.requires_grad else None,
        )

    return _make(a_data * b_data, (a, b), backward, "mul")


def relu(x):
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0), (x,), backward, "relu")


def tensor_sum(x):
    shape = x.data.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward, "sum")


def concat_channels(tensors):
    """Concatenate NCHW tensors along the channel axis; N, H, W must match."""
    if not tensors:
        raise ValidationError("concat_channels: empty input list")
    _same_dtype("concat_channels", *tensors)
    first = tensors[0].data.shape
    for t in tensors:
        s = t.data.shape
        if len(s) != 4 or (s[0], s[2], s[3]) != (first[0], first[2], first[3]):
            raise ShapeError(f"concat_channels: shape {s} incompatible with {first}")
    widths = [t.data.shape[1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=1)
        return tuple(
            p if t.requires_grad else None for p, t in zip(pieces, tensors)
        )

    return _make(
        np.concatenate([t.data for t in tensors], axis=1),
        tuple(tensors),
        backward,
        "concat",
    )


def reshape(x, shape):
    """View with a new shape; element count must match."""
    in_shape = x.data.shape

    def backward(g):
        return (g.reshape(in_shape),)

    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {in_shape} as {shape}") from None
    return _make(out, (x,), backward, "reshape")


def linear(x, weight, bias=None):
    """y = x @ W + b with x (N, F) and W (F, O)."""
    _same_dtype("linear", x, weight)
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(
            f"linear: need 2-D input and weight, got {x.data.shape} and {weight.data.shape}"
        )
    if x.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(
            f"linear: input features {x.data.shape} vs weight {weight.data.shape}"
        )
    out = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        if bias.data.shape != (weight.data.shape[1],):
            raise ShapeError(
                f"linear: bias {bias.data.shape} vs out features {weight.data.shape[1]}"
            )
        out = out + bias.data
        parents.append(bias)
    x_data, w_data = x.data, weight.data

    def backward(g):
        gx = g @ w_data.T if x.requires_grad else None
        gw = x_data.T @ g if weight.requires_grad else None
        if bias is not None:
            gb = g.sum(axis=0) if bias.requires_grad else None
            return (gx, gw, gb)
        return (gx, gw)

    return _make(out, tuple(parents), backward, "linear")


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

_COL_INDEX_CACHE = {}


def _im2col_indices(C, H, W, K, stride, pad):
    """CS231n-style gather indices mapping padded input to column matrix."""
    key = (C, H, W, K, stride, pad)
    hit = _COL_INDEX_CACHE.get(key)
    if hit is not None:
        return hit
    out_h = (H + 2 * pad - K) // stride + 1
    out_w = (W + 2 * pad - K) // stride + 1
    i0 = np.repeat(np.arange(K), K)
    i0 = np.tile(i0, C)
    i1 = stride * np.repeat(np.arange(out_h), out_w)
    j0 = np.tile(np.arange(K), K * C)
    j1 = stride * np.tile(np.arange(out_w), out_h)
    i = i0.reshape(-1, 1) + i1.reshape(1, -1)
    j = j0.reshape(-1, 1) + j1.reshape(1, -1)
    k = np.repeat(np.arange(C), K * K).reshape(-1, 1)
    # Flat index into a (C, H+2p, W+2p) volume, used by the bincount col2im.
    Hp, Wp = H + 2 * pad, W + 2 * pad
    flat = (k * Hp + i) * Wp + j
    result = (k, i, j, flat.ravel(), out_h, out_w, Hp, Wp)
    _COL_INDEX_CACHE[key] = result
    return result


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """Cross-correlation of NCHW input with OIKK weights.

    Output spatial size is floor((H + 2*pad - K) / stride) + 1.
    """
    _same_dtype("conv2d", x, weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(
            f"conv2d: need NCHW input and OIKK weight, got {x.data.shape} and {weight.data.shape}"
        )
    N, C, H, W = x.data.shape
    O, I, K, K2 = weight.data.shape
    if K != K2:
        raise ShapeError(f"conv2d: non-square kernel {weight.data.shape}")
    if C != I:
        raise ShapeError(
            f"conv2d: input channels {x.data.shape} vs weight in-channels {weight.data.shape}"
        )
    if stride < 1 or pad < 0:
        raise ValidationError(f"conv2d: invalid stride={stride} pad={pad}")
    if H + 2 * pad < K or W + 2 * pad < K:
        raise ShapeError(
            f"conv2d: kernel {K} exceeds padded input {(H + 2 * pad, W + 2 * pad)}"
        )
    k, i, j, flat, out_h, out_w, Hp, Wp = _im2col_indices(C, H, W, K, stride, pad)
    if pad > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    cols = xp[:, k, i, j]  # (N, C*K*K, L)
    w_flat = weight.data.reshape(O, -1)
    out = np.matmul(w_flat, cols)  # (N, O, L)
    if bias is not None:
        if bias.data.shape != (O,):
            raise ShapeError(f"conv2d: bias {bias.data.shape} vs out channels {O}")
        out = out + bias.data.reshape(1, O, 1)
    out = np.ascontiguousarray(out.reshape(N, O, out_h, out_w))
    parents = [x, weight] + ([bias] if bias is not None else [])

    def backward(g):
        g_flat = g.reshape(N, O, -1)
        gw = None
        if weight.requires_grad:
            gw = np.einsum("nol,nkl->ok", g_flat, cols).reshape(weight.data.shape)
        gx = None
        if x.requires_grad:
            dcols = np.matmul(w_flat.T, g_flat)  # (N, C*K*K, L)
            plane = Hp * Wp * C
            gxp = np.empty((N, C, Hp, Wp), dtype=g.dtype)
            for n in range(N):
                gxp[n] = np.bincount(
                    flat, weights=dcols[n].ravel(), minlength=plane
                ).reshape(C, Hp, Wp)
            gx = gxp[:, :, pad : pad + H, pad : pad + W] if pad > 0 else gxp
            gx = np.ascontiguousarray(gx, dtype=g.dtype)
        if bias is not None:
            gb = g_flat.sum(axis=(0, 2)) if bias.requires_grad else None
            return (gx, gw, gb)
        return (gx, gw)

    return _make(out, tuple(parents), backward, "conv2d")


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


def batch_norm2d(x, gamma, beta, running_mean, running_var, training, eps=1e-5, momentum=0.1):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with batch statistics (biased variance) and updates
    the running buffers in place; eval mode normalizes with the buffers.
    running_mean / running_var are plain float arrays, never differentiated.
    """
    _same_dtype("batch_norm2d", x, gamma, beta)
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm2d: need NCHW input, got {x.data.shape}")
    N, C, H, W = x.data.shape
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeError(
            f"batch_norm2d: gamma {gamma.data.shape} / beta {beta.data.shape} vs channels {C}"
        )
    m = N * H * W
    if training:
        if m < 2:
            raise ValidationError(
                "batch_norm2d: train mode needs at least 2 values per channel "
                f"(got N*H*W = {m})"
            )
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean.reshape(1, C, 1, 1)) * inv_std.reshape(1, C, 1, 1)
    out = gamma.data.reshape(1, C, 1, 1) * x_hat + beta.data.reshape(1, C, 1, 1)

    def backward(g):
        ggamma = (g * x_hat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gk = gamma.data.reshape(1, C, 1, 1) * inv_std.reshape(1, C, 1, 1)
            if training:
                g_mean = g.mean(axis=(0, 2, 3)).reshape(1, C, 1, 1)
                gx_hat_mean = (g * x_hat).mean(axis=(0, 2, 3)).reshape(1, C, 1, 1)
                gx = gk * (g - g_mean - x_hat * gx_hat_mean)
            else:
                gx = gk * g
        return (gx, ggamma, gbeta)

    return _make(out.astype(x.data.dtype, copy=False), (x, gamma, beta), backward, "batch_norm2d")


# ---------------------------------------------------------------------------
# Resize and pooling (separable matrix form: out = A_h @ x @ A_w^T)
# ---------------------------------------------------------------------------

_RESIZE_MATRIX_CACHE = {}


def _interp_matrix(out_size, in_size, dtype):
    """Align-corners linear interpolation matrix of shape (out, in)."""
    key = ("interp", out_size, in_size, np.dtype(dtype).str)
    hit = _RESIZE_MATRIX_CACHE.get(key)
    if hit is not None:
        return hit
    A = np.zeros((out_size, in_size), dtype=dtype)
    if out_size == 1 or in_size == 1:
        # Degenerate axis: align-corners pins the single sample to index 0.
        A[:, 0] = 1.0
    else:
        src = np.arange(out_size, dtype=np.float64) * (in_size - 1) / (out_size - 1)
        lo = np.floor(src).astype(np.int64)
        lo = np.minimum(lo, in_size - 2)
        w = src - lo
        A[np.arange(out_size), lo] += 1.0 - w
        A[np.arange(out_size), lo + 1] += w
    _RESIZE_MATRIX_CACHE[key] = A
    return A


def _pool_matrix(bins, in_size, dtype):
    """Adaptive averaging matrix: row b averages input cells [b*n/B, ceil((b+1)*n/B))."""
    key = ("pool", bins, in_size, np.dtype(dtype).str)
    hit = _RESIZE_MATRIX_CACHE.get(key)
    if hit is not None:
        return hit
    A = np.zeros((bins, in_size), dtype=dtype)
    for b in range(bins):
        start = (b * in_size) // bins
        end = -(-((b + 1) * in_size) // bins)  # ceil division
        A[b, start:end] = 1.0 / (end - start)
    _RESIZE_MATRIX_CACHE[key] = A
    return A


def _apply_separable(x_data, A_h, A_w):
    N, C, H, W = x_data.shape
    flat = x_data.reshape(N * C, H, W)
    tmp = np.matmul(A_h, flat)  # (N*C, oh, W)
    out = np.matmul(tmp, A_w.T)  # (N*C, oh, ow)
    return np.ascontiguousarray(out.reshape(N, C, A_h.shape[0], A_w.shape[0]))


def _separable_op(x, A_h, A_w, op_name):
    out = _apply_separable(x.data, A_h, A_w)

    def backward(g):
        return (_apply_separable(g, A_h.T, A_w.T),)

    return _make(out, (x,), backward, op_name)


def bilinear_resize(x, out_h, out_w):
    """Align-corners bilinear resize of an NCHW tensor; differentiable."""
    if x.data.ndim != 4:
        raise ShapeError(f"bilinear_resize: need NCHW input, got {x.data.shape}")
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"bilinear_resize: bad output size {(out_h, out_w)}")
    N, C, H, W = x.data.shape
    if (out_h, out_w) == (H, W):
        # Identity resize must be bit-exact.
        def backward(g):
            return (g,)

        return _make(x.data, (x,), backward, "bilinear_resize")
    A_h = _interp_matrix(out_h, H, x.data.dtype)
    A_w = _interp_matrix(out_w, W, x.data.dtype)
    return _separable_op(x, A_h, A_w, "bilinear_resize")


def adaptive_avg_pool2d(x, bins_h, bins_w):
    """Mean over a near-equal partition of the input; (1, 1) is global average pooling."""
    if x.data.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool2d: need NCHW input, got {x.data.shape}")
    N, C, H, W = x.data.shape
    if bins_h < 1 or bins_w < 1 or bins_h > H or bins_w > W:
        raise ValidationError(
            f"adaptive_avg_pool2d: bins {(bins_h, bins_w)} invalid for input {(H, W)}"
        )
    A_h = _pool_matrix(bins_h, H, x.data.dtype)
    A_w = _pool_matrix(bins_w, W, x.data.dtype)
    return _separable_op(x, A_h, A_w, "adaptive_avg_pool2d")


def max_pool2d(x, k, stride, pad=0):
    """Max pooling; gradient goes to the first row-major argmax of each window."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d: need NCHW input, got {x.data.shape}")
    N, C, H, W = x.data.shape
    if H + 2 * pad < k or W + 2 * pad < k:
        raise ShapeError(f"max_pool2d: window {k} exceeds padded input {(H, W)}")
    if pad > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    out_h = (Hp - k) // stride + 1
    out_w = (Wp - k) // stride + 1
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(N, C, out_h, out_w, k, k),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
    )
    win_flat = windows.reshape(N, C, out_h, out_w, k * k)
    arg = win_flat.argmax(axis=-1)  # first occurrence == row-major tie-break
    out = np.take_along_axis(win_flat, arg[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out)

    # Argmax position back in padded coordinates.
    oy, ox = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    row = oy[None, None] * stride + arg // k
    col = ox[None, None] * stride + arg % k

    def backward(g):
        nc_off = (np.arange(N * C) * (Hp * Wp)).reshape(N, C, 1, 1)
        flat_idx = (nc_off + row * Wp + col).ravel()
        gxp = np.bincount(flat_idx, weights=g.ravel(), minlength=N * C * Hp * Wp)
        gxp = gxp.reshape(N, C, Hp, Wp).astype(g.dtype)
        if pad > 0:
            gxp = gxp[:, :, pad : pad + H, pad : pad + W]
        return (np.ascontiguousarray(gxp),)

    return _make(out, (x,), backward, "max_pool2d")


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def masked_cross_entropy(logits, target, ignore_index=-1):
    """Mean per-pixel negative log-softmax over non-ignored target positions.

    logits: Tensor of shape (N, K) or (N, K, H, W); target: integer ndarray of
    the matching shape without the class axis. Returns a scalar Tensor; when
    every position is ignored the loss is exactly 0 with zero gradients.
    """
    data = logits.data
    if data.ndim not in (2, 4):
        raise ShapeError(f"masked_cross_entropy: need (N,K) or (N,K,H,W) logits, got {data.shape}")
    target = np.asarray(target)
    if not np.issubdtype(target.dtype, np.integer):
        raise ValidationError("masked_cross_entropy: target must be integer class indices")
    expected = data.shape[:1] + data.shape[2:]
    if target.shape != expected:
        raise ShapeError(
            f"masked_cross_entropy: target {target.shape} vs logits {data.shape}"
        )
    K = data.shape[1]
    valid = target != ignore_index
    labels = np.where(valid, target, 0)
    if labels.min() < 0 or labels.max() >= K:
        bad = target[(target != ignore_index) & ((target < 0) | (target >= K))]
        raise ValidationError(
            f"masked_cross_entropy: class index {bad.ravel()[0]} outside [0, {K})"
        )
    count = int(valid.sum())
    if count == 0:
        zero = np.asarray(0.0, dtype=data.dtype)

        def backward_empty(g):
            return (np.zeros_like(data),)

        return _make(zero, (logits,), backward_empty, "masked_cross_entropy")

    shifted = data - data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_softmax = shifted - np.log(denom)
    picked = np.take_along_axis(log_softmax, np.expand_dims(labels, 1), axis=1)[:, 0]
    loss = -(picked[valid].sum()) / count
    loss = np.asarray(loss, dtype=data.dtype)
    softmax = exp / denom

    def backward(g):
        grad = softmax.copy()
        onehot_idx = np.expand_dims(labels, 1)
        np.put_along_axis(
            grad, onehot_idx, np.take_along_axis(grad, onehot_idx, axis=1) - 1.0, axis=1
        )
        grad *= np.expand_dims(valid, 1)
        grad *= float(g) / count
        return (grad.astype(data.dtype, copy=False),)

    return _make(loss, (logits,), backward, "masked_cross_entropy")


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def randn(rng, shape, std=1.0, dtype=np.float32, requires_grad=False):
    return Tensor(
        (rng.standard_normal(shape) * std).astype(dtype), requires_grad=requires_grad
    )
