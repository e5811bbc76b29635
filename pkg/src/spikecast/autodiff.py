"""Reverse-mode automatic differentiation over dense float64 tensors.

Operations executed while a :class:`Tape` is active record a backward
closure on it; :func:`backward` replays the recordings in reverse order,
which is a valid topological order because it is the execution order.
Outside a tape every op is a plain eager numpy computation, so forward
evaluation is tape-free reproducible.

Tapes are thread-local: each training thread owns its own tape and
tensors are value-semantic numpy arrays, safe to hand between threads.
"""

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_LOCAL = threading.local()


def _active_tape():
    return getattr(_LOCAL, "tape", None)


class Tensor:
    """Dense float64 array with a gradient slot.

    ``requires_grad`` marks trainable leaves; tensors produced by ops
    inherit the flag from their inputs so untouched subgraphs cost
    nothing in the backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_leaf")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor holds non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the named functions below do the work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass(frozen=True)
class SurrogateSpec:
    """Surrogate derivative used for the spike nonlinearity.

    ``fast-sigmoid`` gives d spike / dU = 1 / (1 + slope * |U - theta|)^2.
    """

    kind: str = "fast-sigmoid"
    slope: float = 25.0

    def __post_init__(self):
        if self.kind != "fast-sigmoid":
            raise ContractError(f"unknown surrogate kind {self.kind!r}")
        if not self.slope > 0:
            raise ContractError("surrogate slope must be positive")


class Tape:
    """Gradient tape; records ops in execution order.

    Only one tape may be active per thread. ``parameters`` collects the
    requires_grad leaves encountered while recording so unreachable
    parameters can still be given an exact zero gradient.
    """

    def __init__(self):
        self._records = []
        self._param_ids = set()
        self.parameters = []

    def __enter__(self):
        if _active_tape() is not None:
            raise ContractError("a tape is already active on this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.tape = None
        return False

    def _record(self, out, inputs, vjp):
        self._records.append((out, inputs, vjp))
        for t in inputs:
            if t.requires_grad and t._leaf and id(t) not in self._param_ids:
                self._param_ids.add(id(t))
                self.parameters.append(t)


def backward(tape, loss):
    """Accumulate d loss / d tensor for everything recorded on the tape.

    ``loss`` must be scalar. Gradients land on ``Tensor.grad``; leaves
    registered on the tape but unreachable from the loss get exact zeros.
    """

    if not isinstance(tape, Tape):
        raise ContractError("backward() needs the tape the loss was recorded on")
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    for out, inputs, _ in tape._records:
        out.grad = None
        for t in inputs:
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for out, inputs, vjp in reversed(tape._records):
        if out.grad is None:
            continue
        for t, g in zip(inputs, vjp(out.grad)):
            if g is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g
    for p in tape.parameters:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(data, inputs, vjp):
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out._leaf = False
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, inputs, vjp)
    return out


def _unbroadcast(grad, shape):
    """Sum-reduce a broadcast gradient back to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(a.data + b.data, (a, b), vjp)


def subtract(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "subtract")

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(a.data - b.data, (a, b), vjp)


def multiply(a, b):
    """Elementwise product (with numpy broadcasting for scalars/biases)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "multiply")
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), vjp)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not conform")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), vjp)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0

    def vjp(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), (x,), vjp)


def tanh(x):
    x = _as_tensor(x)
    out_data = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out_data * out_data),)

    return _result(out_data, (x,), vjp)


def mean(x):
    x = _as_tensor(x)
    n = x.data.size
    shape = x.data.shape

    def vjp(g):
        return (np.full(shape, float(g) / n),)

    return _result(np.asarray(x.data.mean()), (x,), vjp)


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _result(x.data.reshape(shape), (x,), vjp)


def flatten(x, start_axis=0):
    """Collapse all axes from ``start_axis`` on into one."""
    x = _as_tensor(x)
    lead = x.data.shape[:start_axis]
    return reshape(x, lead + (-1,))


def mse_loss(pred, target):
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss: shapes {pred.data.shape} and {target.data.shape} differ")
    diff = pred.data - target.data
    n = diff.size

    def vjp(g):
        scaled = (2.0 * float(g) / n) * diff
        return scaled, -scaled

    return _result(np.asarray(np.mean(diff * diff)), (pred, target), vjp)


def spike_threshold(u, theta, surrogate=None, smooth=False):
    """Heaviside spike at ``u >= theta`` with a fast-sigmoid surrogate gradient.

    Forward emits {0,1}; the recorded backward is 1/(1 + k|u - theta|)^2,
    which is finite everywhere. With ``smooth=True`` the forward instead
    evaluates x/(1 + k|x|), the smooth primitive whose exact derivative
    equals the surrogate; finite-difference checks use that mode.
    """

    u = _as_tensor(u)
    surrogate = surrogate or SurrogateSpec()
    # theta = +inf is allowed in hard mode: it silences the layer (no
    # spikes, zero surrogate gradient).
    k = surrogate.slope
    x = u.data - theta
    if smooth:
        out_data = x / (1.0 + k * np.abs(x))
    else:
        out_data = (x >= 0.0).astype(np.float64)
    grad_local = 1.0 / (1.0 + k * np.abs(x)) ** 2

    def vjp(g):
        return (g * grad_local,)

    return _result(out_data, (u,), vjp)


def avg_pool2d(x, k=2):
    """Non-overlapping k x k average pooling over the two trailing axes.

    Trailing rows/columns that do not fill a full window are dropped.
    """

    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError(f"avg_pool2d: need at least 2 axes, got shape {x.data.shape}")
    h, w = x.data.shape[-2], x.data.shape[-1]
    if h < k or w < k:
        raise ShapeError(f"avg_pool2d: window {k} larger than input {x.data.shape}")
    ho, wo = h // k, w // k
    lead = x.data.shape[:-2]
    cropped = x.data[..., : ho * k, : wo * k]
    blocks = cropped.reshape(lead + (ho, k, wo, k))
    out_data = blocks.mean(axis=(-3, -1))

    def vjp(g):
        gx = np.zeros_like(x.data)
        spread = np.repeat(np.repeat(g, k, axis=-2), k, axis=-1) / (k * k)
        gx[..., : ho * k, : wo * k] = spread
        return (gx,)

    return _result(out_data, (x,), vjp)


def _pad_hw(data, padding):
    if padding == 0:
        return data.copy()
    pad = [(0, 0)] * (data.ndim - 2) + [(padding, padding), (padding, padding)]
    return np.pad(data, pad)


def conv2d(x, kernels, stride=1, padding=0):
    """2-D cross-correlation of (C,H,W) or (B,C,H,W) input with (Co,Ci,kh,kw) kernels."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    kd = kernels.data
    if xd.ndim != 4 or kd.ndim != 4:
        raise ShapeError(f"conv2d: input shape {x.data.shape}, kernel shape {kd.shape}")
    bsz, cin, h, w = xd.shape
    cout, kcin, kh, kw = kd.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {kcin}")
    xp = _pad_hw(xd, padding)
    hp, wp = xp.shape[-2:]
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {kd.shape} larger than padded input {xp.shape}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    sb, sc, sh, sw = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(bsz, cin, kh, kw, ho, wo),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    cols2 = cols.reshape(bsz, cin * kh * kw, ho * wo)
    kf = kd.reshape(cout, cin * kh * kw)
    out_data = np.matmul(kf, cols2).reshape(bsz, cout, ho, wo)

    def vjp(g):
        g4 = g[None] if squeeze else g
        g2 = g4.reshape(bsz, cout, ho * wo)
        gk = np.einsum("bol,bfl->of", g2, cols2).reshape(kd.shape)
        gcols = np.matmul(kf.T, g2).reshape(bsz, cin, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return (gx[0] if squeeze else gx), gk

    return _result(out_data[0] if squeeze else out_data, (x, kernels), vjp)


def grad_check(f, params, eps=1e-4, rng=None, max_elements=None):
    """Max relative error between analytic gradients of ``f()`` and central differences.

    ``f`` must be a deterministic scalar function of the tensors in
    ``params`` (a name -> Tensor mapping). Error is measured per element
    as |analytic - numeric| / max(1, |analytic|). When ``max_elements``
    is set, that many elements per parameter are probed, drawn with
    ``rng`` (all elements otherwise).
    """

    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elements is not None and n > max_elements:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(n, size=max_elements, replace=False)
        else:
            idxs = range(n)
        aflat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f().item()
            flat[i] = orig - eps
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            if err > worst:
                worst = err
    return worst
