"""Dense tensors with tape-based reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape` whenever one of
their inputs requires a gradient. Outside a tape nothing is recorded, which
makes inference free of graph bookkeeping and makes any tensor computed
outside a tape a constant for later passes.

Activations use a channels-last layout: an image is ``H x W x C`` and a batch
is ``N x H x W x C``. Convolution kernels are ``k x k x C_in x C_out``.
Shapes are explicit; the only broadcasting is bias addition.
"""

import contextlib
import threading

import numpy as np

DEFAULT_DTYPE = np.float32

_local = threading.local()


def _stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_tape():
    """Suspend recording inside an active tape."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    """n-dimensional real array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                arr = data
            elif isinstance(data, (np.float32, np.float64)):
                # 0-d results of numpy arithmetic come back as scalars
                arr = np.asarray(data)
            else:
                arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class Tape:
    """Ordered record of executed operations for one forward pass."""

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, parents, backward_fn):
        self.nodes.append((out, parents, backward_fn))
        out._tape = self

    def clear(self):
        for out, _, _ in self.nodes:
            out._tape = None
        self.nodes = []


def _result(data, parents, backward_fn):
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, parents, backward_fn)
    return out


def backward(loss):
    """Populate ``.grad`` on every grad-requiring tensor reachable from ``loss``.

    Leaf gradients accumulate into existing ``.grad`` arrays. The tape is
    released afterwards and cannot be replayed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if isinstance(loss, Tensor) and loss.requires_grad and loss.grad is not None:
            raise RuntimeError("backward already ran for this loss; run a new forward pass")
        raise RuntimeError("loss is not on an active tape (record the forward pass inside `with Tape():`)")
    if tape.consumed:
        raise RuntimeError("backward already ran on this tape; run a new forward pass")
    tape.consumed = True

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for out, parents, fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        out.grad = g
        for p, pg in zip(parents, fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
                if p._tape is not tape:
                    leaves[key] = p
    for key, p in leaves.items():
        g = grads[key]
        p.grad = g if p.grad is None else p.grad + g
    tape.clear()


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a, b):
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


residual_add = add


def sub(a, b):
    _same_shape("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x, c):
    c = float(c)
    return _result(x.data * x.data.dtype.type(c), (x,), lambda g: (g * g.dtype.type(c),))


def add_scalar(x, c):
    return _result(x.data + x.data.dtype.type(c), (x,), lambda g: (g,))


def exp(x):
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def log(x):
    xd = x.data
    return _result(np.log(xd), (x,), lambda g: (g / xd,))


def elu(x):
    """ELU with alpha = 1."""
    xd = x.data
    pos = xd > 0
    out = np.where(pos, xd, np.expm1(np.minimum(xd, 0)))
    return _result(out, (x,), lambda g: (g * np.where(pos, 1, out + 1).astype(xd.dtype),))


def relu(x):
    xd = x.data
    mask = xd > 0
    return _result(xd * mask, (x,), lambda g: (g * mask,))


def sigmoid(x):
    out = 0.5 * (np.tanh(0.5 * x.data) + 1)
    return _result(out, (x,), lambda g: (g * out * (1 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1 - out * out),))


def minimum(a, b):
    _same_shape("minimum", a, b)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)
    return _result(out, (a, b), lambda g: (g * pick_a, g * ~pick_a))


def clip(x, lo, hi):
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _result(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


# ----------------------------------------------------------------- reductions


def tsum(x, axis=None):
    xd = x.data
    if axis is None:
        out = np.asarray(xd.sum(), dtype=xd.dtype)
        return _result(out, (x,), lambda g: (np.broadcast_to(g, xd.shape).copy(),))
    if axis not in (-1, xd.ndim - 1):
        raise ValueError("sum supports the full reduction or the last axis only")
    out = xd.sum(axis=-1)
    return _result(out, (x,), lambda g: (np.repeat(g[..., None], xd.shape[-1], axis=-1),))


def tmean(x):
    xd = x.data
    n = xd.size
    out = np.asarray(xd.mean(), dtype=xd.dtype)
    return _result(out, (x,), lambda g: (np.full(xd.shape, g / n, dtype=xd.dtype),))


def global_avg_pool(x):
    """Spatial mean: ``(N,H,W,C) -> (N,C)`` or ``(H,W,C) -> (C,)``."""
    xd = x.data
    if xd.ndim not in (3, 4):
        raise ValueError(f"global_avg_pool expects a 3-D or 4-D tensor, got {xd.shape}")
    h, w = xd.shape[-3], xd.shape[-2]
    out = xd.mean(axis=(-3, -2))

    def bw(g):
        expanded = np.broadcast_to(g[..., None, None, :], xd.shape) / (h * w)
        return (expanded.astype(xd.dtype),)

    return _result(out, (x,), bw)


def mse(pred, target):
    """Mean of squared differences; ``target`` is treated as a constant."""
    _same_shape("mse", pred, target)
    if target.requires_grad:
        raise ValueError("mse: target must not require a gradient")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.mean(diff * diff), dtype=diff.dtype)
    return _result(out, (pred, target), lambda g: (diff * (2 * g / n), None))


# ----------------------------------------------------------------- structural


def reshape(x, shape):
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat_channels(a, b):
    """Concatenate along the channel (last) axis."""
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"concat_channels: spatial shapes differ {a.shape} vs {b.shape}")
    ca = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return _result(out, (a, b), lambda g: (g[..., :ca], g[..., ca:]))


def upsample_nearest(x, factor):
    """Replicate every spatial cell into a ``factor x factor`` block."""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    xd = x.data
    if xd.ndim not in (3, 4):
        raise ValueError(f"upsample_nearest expects a 3-D or 4-D tensor, got {xd.shape}")
    out = np.repeat(np.repeat(xd, factor, axis=-3), factor, axis=-2)

    def bw(g):
        *lead, h, w, c = xd.shape
        gg = g.reshape(*lead, h, factor, w, factor, c)
        return (gg.sum(axis=(-4, -2)),)

    return _result(out, (x,), bw)


# ------------------------------------------------------------- linear / conv


def linear(x, weight, bias):
    """``weight @ x + bias`` for ``x`` of shape ``(N,)`` or a batch ``(B, N)``."""
    if weight.ndim != 2 or bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bad weight/bias shapes {weight.shape}, {bias.shape}")
    if x.shape[-1] != weight.shape[1] or x.ndim not in (1, 2):
        raise ValueError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data

    def bw(g):
        gx = g @ wd if x.requires_grad else None
        if xd.ndim == 1:
            gw = np.outer(g, xd)
            gb = g
        else:
            gw = g.T @ xd
            gb = g.sum(axis=0)
        return (gx, gw, gb)

    return _result(out, (x, weight, bias), bw)


def _pad_pair(padding):
    if isinstance(padding, (tuple, list)):
        before, after = (int(v) for v in padding)
    else:
        before = after = int(padding)
    if before < 0 or after < 0:
        raise ValueError(f"conv2d: padding must be non-negative, got {padding}")
    return before, after


def conv_output_size(size, k, stride, padding):
    """Output length; ``padding`` is an int or a ``(before, after)`` pair."""
    before, after = _pad_pair(padding)
    span = size + before + after - k
    if span < 0 or span % stride:
        raise ValueError(
            f"conv2d: (size {size} + padding {before}+{after} - k {k}) must be a non-negative"
            f" multiple of stride {stride}"
        )
    return span // stride + 1


def conv2d(x, kernel, bias=None, stride=1, padding=0, allow_even=False):
    """Cross-correlation with zero padding (no kernel flip).

    ``x`` is ``H x W x C_in`` or ``N x H x W x C_in``; ``kernel`` is
    ``k x k x C_in x C_out`` with odd ``k`` unless ``allow_even`` is set.
    ``padding`` may be ``(before, after)``, applied to both spatial axes.
    """
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"conv2d: kernel must be k x k x C_in x C_out, got {kernel.shape}")
    k, _, cin, cout = kernel.shape
    if k % 2 == 0 and not allow_even:
        raise ValueError(f"conv2d: kernel size must be odd, got {k}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    xd = x.data
    batched = xd.ndim == 4
    if xd.ndim not in (3, 4):
        raise ValueError(f"conv2d: input must be H x W x C (optionally batched), got {xd.shape}")
    if xd.shape[-1] != cin:
        raise ValueError(f"conv2d: input has {xd.shape[-1]} channels, kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    x4 = xd if batched else xd[None]
    n, h, w, _ = x4.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    pb, pa = _pad_pair(padding)
    padded = pb or pa
    xp = np.pad(x4, ((0, 0), (pb, pa), (pb, pa), (0, 0))) if padded else x4
    wd = kernel.data
    hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1

    out = np.zeros((n, ho, wo, cout), dtype=np.result_type(xd, wd))
    for i in range(k):
        for j in range(k):
            out += xp[:, i:i + hi:stride, j:j + wi:stride, :] @ wd[i, j]
    if bias is not None:
        out += bias.data
    if not batched:
        out = out[0]

    def bw(g):
        g4 = g if batched else g[None]
        gx = gw = gb = None
        if x.requires_grad and stride == 1:
            # full correlation of the output gradient with the flipped kernel
            q = k - 1
            gq = np.pad(g4, ((0, 0), (q, q), (q, q), (0, 0))) if q else g4
            wt = np.ascontiguousarray(wd[::-1, ::-1].transpose(0, 1, 3, 2))
            gxp = np.zeros_like(xp)
            hp, wp = xp.shape[1], xp.shape[2]
            for i in range(k):
                for j in range(k):
                    gxp += gq[:, i:i + hp, j:j + wp, :] @ wt[i, j]
        elif x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + hi:stride, j:j + wi:stride, :] += g4 @ wd[i, j].T
        if x.requires_grad:
            gx = gxp[:, pb:pb + h, pb:pb + w, :] if padded else gxp
            if not batched:
                gx = gx[0]
        g2 = g4.reshape(-1, cout)
        if kernel.requires_grad and stride == 1 and cout <= 8:
            # few output channels: one GEMM against the gradient shifted to every offset
            hp, wp = xp.shape[1], xp.shape[2]
            shifted = np.zeros((n, hp, wp, k, k, cout), dtype=g4.dtype)
            for i in range(k):
                for j in range(k):
                    shifted[:, i:i + ho, j:j + wo, i, j, :] = g4
            gw = xp.reshape(-1, cin).T @ shifted.reshape(-1, k * k * cout)
            gw = np.ascontiguousarray(gw.reshape(cin, k, k, cout).transpose(1, 2, 0, 3))
        elif kernel.requires_grad:
            gw = np.empty_like(wd)
            for i in range(k):
                for j in range(k):
                    patch = xp[:, i:i + hi:stride, j:j + wi:stride, :].reshape(-1, cin)
                    gw[i, j] = patch.T @ g2
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gw, gb)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, bw)


# ------------------------------------------------------------- distributions


def log_softmax(x):
    """Log-softmax over the last axis with max-subtraction."""
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _result(out, (x,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def gather(x, index):
    """Pick ``x[i, index[i]]`` from a ``(B, A)`` tensor (or ``x[index]`` from ``(A,)``)."""
    xd = x.data
    index = np.asarray(index, dtype=np.int64)
    if xd.ndim == 1:
        out = np.asarray(xd[index], dtype=xd.dtype)

        def bw(g):
            gx = np.zeros_like(xd)
            np.add.at(gx, index, g)
            return (gx,)

        return _result(out, (x,), bw)
    rows = np.arange(xd.shape[0])
    out = xd[rows, index]

    def bw(g):
        gx = np.zeros_like(xd)
        gx[rows, index] = g
        return (gx,)

    return _result(out, (x,), bw)


class Categorical:
    """Categorical distribution parameterised by logits ``(A,)`` or ``(B, A)``."""

    def __init__(self, logits):
        if logits.shape[-1] < 1:
            raise ValueError("categorical needs at least one action")
        self.logits = logits
        self.log_probs = log_softmax(logits)

    @property
    def probs(self):
        return np.exp(self.log_probs.data)

    def sample(self, rng):
        p = self.probs
        cdf = np.cumsum(p, axis=-1)
        if p.ndim == 1:
            u = rng.random()
            return int(min(np.searchsorted(cdf, u, side="right"), p.shape[-1] - 1))
        u = np.asarray([rng.random() for _ in range(p.shape[0])])
        idx = (cdf <= u[:, None]).sum(axis=-1)
        return np.minimum(idx, p.shape[-1] - 1)

    def mode(self):
        return np.argmax(self.log_probs.data, axis=-1)

    def log_prob(self, actions):
        return gather(self.log_probs, actions)

    def entropy(self):
        return -tsum(mul(exp(self.log_probs), self.log_probs), axis=-1)


def categorical(logits):
    return Categorical(logits)


# ---------------------------------------------------------- gradient checking


def numerical_gradient(loss_fn, tensor, h=1e-4):
    """Central finite differences of ``loss_fn()`` w.r.t. ``tensor.data``."""
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    with no_tape():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            down = float(loss_fn().data)
            flat[i] = orig
            grad[i] = (up - down) / (2 * h)
    return grad.reshape(tensor.shape)


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, maximised."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(loss_fn, tensors, h=1e-4, floor=1e-6):
    """Compare tape gradients with finite differences for each tensor.

    ``loss_fn`` must rebuild the scalar loss from the current tensor values.
    Returns ``{index_or_name: max relative error}``.
    """
    for t in tensors:
        t.grad = None
    with Tape():
        loss = loss_fn()
        backward(loss)
    errors = {}
    for idx, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(loss_fn, t, h)
        errors[t.name or idx] = relative_error(analytic, numeric, floor)
    return errors
