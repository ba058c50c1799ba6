"""Reverse-mode automatic differentiation over dense numpy arrays.

Small tape-based engine: each primitive records its parents and a
vector-Jacobian closure on the result tensor, ``backward()`` walks the
graph once in reverse topological order.  Training runs in float32,
gradient checking in float64; the primitives are dtype-agnostic.

No implicit broadcasting except bias-add over the last axis, which keeps
every gradient rule explicit and individually checkable against finite
differences.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "ShapeMismatchError",
    "NonFiniteError",
    "NondeterministicError",
    "as_tensor",
    "add",
    "mul",
    "matmul",
    "tanh",
    "relu",
    "log",
    "exp",
    "softmax",
    "log_softmax",
    "layer_norm",
    "conv1d",
    "take_rows",
    "transpose",
    "concat",
    "slice_rows",
    "slice_cols",
    "stop_gradient",
    "mse",
    "sum_all",
    "l2_normalize_rows",
    "build_tape",
    "grad_check",
]


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for the requested primitive."""


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf."""


class NondeterministicError(RuntimeError):
    """Two forward evaluations of the same program disagreed."""


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by primitive '{op}'")


def _check_same_dtype(op: str, *tensors: "Tensor") -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TypeError(f"{op}: mixed operand dtypes {sorted(map(str, dtypes))}")


class Tensor:
    """Dense real array with optional gradient tracking.

    ``data`` is an owned float32/float64 numpy array; treat it as
    immutable once the tensor has been consumed by a primitive.  After
    ``backward()`` every reachable tensor with ``requires_grad`` holds
    its accumulated gradient in ``grad`` (same shape as ``data``).
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into the graph's tensors."""
        if self.data.shape != ():
            raise ShapeMismatchError(
                f"backward() requires a scalar root, got shape {self.data.shape}"
            )
        tape = build_tape(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=self.data.dtype)}
        for node in reversed(tape):
            gout = grads.pop(id(node), None)
            if gout is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + gout
            if node._vjp is None:
                continue
            parent_grads = node._vjp(gout)
            for parent, g in zip(node._parents, parent_grads):
                if g is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = g if acc is None else acc + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other, like=self), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Wrap arrays/scalars as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False)


def _result(op: str, data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    out.requires_grad = False
    if tracked:
        # vjp yields grads aligned with the *original* parent order; filter
        # to the tracked subset so backward never walks constants.
        idx = [i for i, p in enumerate(parents) if p.requires_grad or p._parents]

        def filtered(gout, _vjp=vjp, _idx=idx):
            full = _vjp(gout)
            return [full[i] for i in _idx]

        out._parents = tracked
        out._vjp = filtered
    else:
        out._parents = ()
        out._vjp = None
    return out


def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of the graph under ``root``.

    Parents always precede children; backward iterates it once in
    reverse, so the pass is linear in tape length.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    """Elementwise add; also accepts a (D,) bias against an (N, D) operand."""
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_same_dtype("add", a, b)
    if a.shape == b.shape:
        data = a.data + b.data

        def vjp(gout):
            return [gout, gout]

    elif len(a.shape) == 2 and b.shape == (a.shape[1],):
        data = a.data + b.data

        def vjp(gout):
            return [gout, gout.sum(axis=0)]

    else:
        raise ShapeMismatchError(f"add: shapes {a.shape} and {b.shape} do not conform")
    return _result("add", data, (a, b), vjp)


def mul(a, b) -> Tensor:
    """Elementwise product of same-shape tensors, or tensor times scalar."""
    a = as_tensor(a)
    if isinstance(b, (int, float)) or (np.isscalar(b) and not isinstance(b, Tensor)):
        c = float(b)
        data = a.data * np.asarray(c, dtype=a.data.dtype)

        def vjp(gout):
            return [gout * np.asarray(c, dtype=gout.dtype)]

        return _result("mul", data, (a,), vjp)
    b = as_tensor(b, like=a)
    _check_same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mul: shapes {a.shape} and {b.shape} do not conform")
    data = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(gout):
        return [gout * bd, gout * ad]

    return _result("mul", data, (a, b), vjp)


def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_same_dtype("matmul", a, b)
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: shapes {a.shape} and {b.shape} do not conform"
        )
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(gout):
        return [gout @ bd.T, ad.T @ gout]

    return _result("matmul", data, (a, b), vjp)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def vjp(gout):
        return [gout * (1.0 - y * y)]

    return _result("tanh", y, (x,), vjp)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = (x.data > 0).astype(x.data.dtype)
    data = x.data * mask

    def vjp(gout):
        return [gout * mask]

    return _result("relu", data, (x,), vjp)


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)
    xd = x.data

    def vjp(gout):
        return [gout / xd]

    return _result("log", data, (x,), vjp)


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        data = np.exp(x.data)

    def vjp(gout):
        return [gout * data]

    return _result("exp", data, (x,), vjp)


def softmax(x) -> Tensor:
    """Softmax over the last axis (max-shifted for stability)."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(gout):
        dot = (gout * y).sum(axis=-1, keepdims=True)
        return [y * (gout - dot)]

    return _result("softmax", y, (x,), vjp)


def log_softmax(x) -> Tensor:
    """Log-softmax over the last axis; stable building block for InfoNCE."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)

    def vjp(gout):
        return [gout - sm * gout.sum(axis=-1, keepdims=True)]

    return _result("log_softmax", y, (x,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each row over the last axis, then scale and shift."""
    x = as_tensor(x)
    gain = as_tensor(gain, like=x)
    bias = as_tensor(bias, like=x)
    dim = x.shape[-1]
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ShapeMismatchError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} "
            f"do not match last axis of {x.shape}"
        )
    _check_same_dtype("layer_norm", x, gain, bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data
    gd = gain.data

    def vjp(gout):
        dxhat = gout * gd
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        axes = tuple(range(gout.ndim - 1))
        dgain = (gout * xhat).sum(axis=axes) if axes else gout * xhat
        dbias = gout.sum(axis=axes) if axes else gout
        return [dx, dgain, dbias]

    return _result("layer_norm", data, (x, gain, bias), vjp)


def conv1d(x, weight, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution along the time axis.

    ``x`` is (T, C_in), ``weight`` is (k, C_in, C_out), ``bias`` is (C_out,).
    Output is ((T + 2*padding - k)//stride + 1, C_out); zero padding.
    """
    x = as_tensor(x)
    weight = as_tensor(weight, like=x)
    bias = as_tensor(bias, like=x)
    _check_same_dtype("conv1d", x, weight, bias)
    if len(x.shape) != 2 or len(weight.shape) != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatchError(
            f"conv1d: input {x.shape} and weight {weight.shape} do not conform"
        )
    k, c_in, c_out = weight.shape
    if bias.shape != (c_out,):
        raise ShapeMismatchError(f"conv1d: bias shape {bias.shape} != ({c_out},)")
    t_in = x.shape[0]
    t_out = (t_in + 2 * padding - k) // stride + 1
    if t_out < 1:
        raise ShapeMismatchError(
            f"conv1d: input of length {t_in} too short for kernel {k} "
            f"(stride={stride}, padding={padding})"
        )
    if padding:
        pad = np.zeros((padding, c_in), dtype=x.data.dtype)
        xp = np.concatenate([pad, x.data, pad], axis=0)
    else:
        xp = x.data
    # (T_out, k, C_in) windows -> (T_out, k*C_in) @ (k*C_in, C_out)
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)[::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(t_out, k * c_in)
    w_flat = weight.data.reshape(k * c_in, c_out)
    data = cols @ w_flat + bias.data

    def vjp(gout):
        dcols = gout @ w_flat.T
        dxp = np.zeros_like(xp)
        dk = dcols.reshape(t_out, k, c_in)
        for i in range(k):
            dxp[i : i + stride * t_out : stride] += dk[:, i, :]
        dx = dxp[padding : padding + t_in] if padding else dxp
        dw = (cols.T @ gout).reshape(k, c_in, c_out)
        db = gout.sum(axis=0)
        return [dx, dw, db]

    return _result("conv1d", data, (x, weight, bias), vjp)


def take_rows(x, indices) -> Tensor:
    """Gather rows of a 2-D tensor (embedding lookup / length regulation)."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or len(x.shape) != 2:
        raise ShapeMismatchError(
            f"take_rows: need 2-D input and 1-D indices, got {x.shape} and {idx.shape}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(
            f"take_rows: index out of range for {x.shape[0]} rows "
            f"(got min={idx.min()}, max={idx.max()})"
        )
    data = x.data[idx]
    nrows = x.shape[0]

    def vjp(gout):
        dx = np.zeros((nrows, gout.shape[1]), dtype=gout.dtype)
        np.add.at(dx, idx, gout)
        return [dx]

    return _result("take_rows", data, (x,), vjp)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if len(x.shape) != 2:
        raise ShapeMismatchError(f"transpose: need 2-D input, got {x.shape}")
    data = x.data.T.copy()

    def vjp(gout):
        return [gout.T]

    return _result("transpose", data, (x,), vjp)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeMismatchError("concat: empty input list")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(gout):
        return list(np.split(gout, splits, axis=axis))

    return _result("concat", data, tuple(parts), vjp)


def slice_rows(x, start: int, stop: int) -> Tensor:
    return _slice(x, (slice(start, stop), slice(None)))


def slice_cols(x, start: int, stop: int) -> Tensor:
    return _slice(x, (slice(None), slice(start, stop)))


def _slice(x, key) -> Tensor:
    x = as_tensor(x)
    if len(x.shape) != 2:
        raise ShapeMismatchError(f"slice: need 2-D input, got {x.shape}")
    data = x.data[key].copy()
    shape = x.shape

    def vjp(gout):
        dx = np.zeros(shape, dtype=gout.dtype)
        dx[key] = gout
        return [dx]

    return _result("slice", data, (x,), vjp)


class _SgReplay:
    """Records stop-gradient outputs on a reference pass, replays them later.

    A value crossing stop-gradient contributes nothing to the derivative,
    so a finite-difference oracle must hold it at its reference value
    while perturbing parameters; otherwise the numeric gradient includes
    exactly the paths the stop is defined to exclude.
    """

    __slots__ = ("mode", "values", "cursor")

    def __init__(self):
        self.mode = "record"
        self.values: list[np.ndarray] = []
        self.cursor = 0


_SG_REPLAY: _SgReplay | None = None


@contextmanager
def _sg_capture(ctx: _SgReplay | None):
    global _SG_REPLAY
    prev = _SG_REPLAY
    _SG_REPLAY = ctx
    try:
        yield
    finally:
        _SG_REPLAY = prev


def stop_gradient(x) -> Tensor:
    """Pass the value through; block all gradient flow into ``x``."""
    x = as_tensor(x)
    ctx = _SG_REPLAY
    if ctx is None:
        return Tensor(x.data, requires_grad=False)
    if ctx.mode == "record":
        ctx.values.append(np.array(x.data, copy=True))
        return Tensor(x.data, requires_grad=False)
    if ctx.cursor >= len(ctx.values):
        raise NondeterministicError(
            "stop-gradient call count grew between grad_check passes"
        )
    data = ctx.values[ctx.cursor]
    ctx.cursor += 1
    return Tensor(data, requires_grad=False)


def mse(x, target) -> Tensor:
    """Mean over all elements of the squared difference to a constant target."""
    x = as_tensor(x)
    t = np.asarray(target.data if isinstance(target, Tensor) else target,
                   dtype=x.data.dtype)
    if x.shape != t.shape:
        raise ShapeMismatchError(f"mse: shapes {x.shape} and {t.shape} do not conform")
    diff = x.data - t
    n = max(diff.size, 1)
    data = np.asarray((diff * diff).sum() / n, dtype=x.data.dtype)

    def vjp(gout):
        return [gout * (2.0 / n) * diff]

    return _result("mse", data, (x,), vjp)


def sum_all(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)
    shape = x.shape

    def vjp(gout):
        return [np.full(shape, gout, dtype=gout.dtype)]

    return _result("sum_all", data, (x,), vjp)


def l2_normalize_rows(x, eps: float = 1e-12) -> Tensor:
    """Scale each row of a 2-D tensor to unit Euclidean norm."""
    x = as_tensor(x)
    if len(x.shape) != 2:
        raise ShapeMismatchError(f"l2_normalize_rows: need 2-D input, got {x.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, np.asarray(eps, dtype=x.data.dtype))
    y = x.data / norms

    def vjp(gout):
        dot = (gout * y).sum(axis=1, keepdims=True)
        return [(gout - y * dot) / norms]

    return _result("l2_normalize_rows", y, (x,), vjp)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, params: dict[str, Tensor], epsilon: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the parameter dict to a scalar Tensor and must be
    deterministic; this is verified by evaluating it twice.  Parameters
    are promoted to float64 for the check.  The relative error for each
    entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

    Values crossing stop-gradient are recorded on the first pass and held
    fixed during the perturbed evaluations: a stop-gradient defines the
    derivative with its output treated as a constant, so the numeric
    oracle has to measure that same function.
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ValueError(f"grad_check: epsilon must be in (0, 1e-2], got {epsilon}")
    params64 = {
        name: Tensor(p.data.astype(np.float64), requires_grad=True)
        for name, p in params.items()
    }
    ctx = _SgReplay()
    with _sg_capture(ctx):
        first = f(params64)
    ctx.mode = "replay"

    def run() -> Tensor:
        ctx.cursor = 0
        with _sg_capture(ctx):
            out = f(params64)
        if ctx.cursor != len(ctx.values):
            raise NondeterministicError(
                "stop-gradient call count shrank between grad_check passes"
            )
        return out

    second = run()
    if first.data.tobytes() != second.data.tobytes():
        raise NondeterministicError(
            "grad_check: two forward passes disagree; f is not deterministic"
        )
    for p in params64.values():
        p.zero_grad()
    first.backward()

    worst = 0.0
    for p in params64.values():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(run().data)
            flat[i] = orig - epsilon
            lo = float(run().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * epsilon)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
