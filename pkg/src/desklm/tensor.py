"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays and record a dynamic tape of operations; calling
:func:`backward` on a scalar loss walks the tape once and returns gradients
for every leaf that requires them.  The op set is deliberately small and
closed (see ``apply``), shapes are checked strictly, and there is **no**
silent broadcasting: the only shape coercions allowed in ``add``/``mul`` are

* identical shapes,
* ``(..., H) op (H,)``    — bias-like last-dim vector,
* ``(..., H) op (..., 1)`` — per-row scalar (the keepdims result of
  ``mean_lastdim``),
* one operand of shape ``()`` — a true scalar constant.

Everything else must be reshaped explicitly.  Default precision is float64;
float32 can be selected per run via :func:`set_default_dtype`.  With
:func:`set_strict` enabled, any non-finite op output raises immediately.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "tensor", "apply", "backward", "finite_diff_check",
    "set_strict", "set_default_dtype", "default_dtype", "NonFiniteError",
    "matmul", "add", "mul", "scale", "transpose2d", "reshape", "concat",
    "slice_tensor", "embedding_lookup", "softmax_lastdim", "silu",
    "mean_lastdim", "rsqrt", "sum_all", "cross_entropy_rows", "where_mask",
    "cast",
]

_DEFAULT_DTYPE = np.float64
_STRICT = False


class NonFiniteError(FloatingPointError):
    """Raised in strict mode when an op produces NaN or Inf."""


def set_strict(flag: bool) -> None:
    global _STRICT
    _STRICT = bool(flag)


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if isinstance(dtype, str):
        dtype = {"fp64": np.float64, "fp32": np.float32,
                 "float64": np.float64, "float32": np.float32}[dtype]
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported default dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """A numpy array plus the tape bookkeeping needed for backward."""

    __slots__ = ("data", "requires_grad", "grad", "_vjps", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("Tensor(data) expects array-like, not Tensor")
        arr = np.asarray(data)
        if arr.dtype.kind in "fc":
            arr = arr.astype(dtype or arr.dtype, copy=False)
        else:
            arr = arr.astype(dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._vjps = ()      # tuple of (input Tensor, vjp(g) -> np.ndarray)
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


# ---------------------------------------------------------------------------
# op plumbing


def _make(out_data: np.ndarray, op: str, vjps) -> Tensor:
    if _STRICT and out_data.dtype.kind == "f" and not np.isfinite(out_data).all():
        raise NonFiniteError(f"{op}: non-finite values in output")
    t = Tensor.__new__(Tensor)
    t.data = out_data
    t.requires_grad = any(inp.requires_grad for inp, _ in vjps)
    t.grad = None
    t._vjps = tuple((inp, fn) for inp, fn in vjps if inp.requires_grad)
    t._op = op
    t._consumed = False
    return t


def _check_float(op: str, *ts: Tensor) -> None:
    dtypes = {t.dtype for t in ts}
    if len(dtypes) > 1:
        raise ValueError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}; cast explicitly")


def _pair_mode(op: str, a: Tensor, b: Tensor) -> str:
    """Classify an add/mul operand pair against the broadcast whitelist."""
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "b_scalar"
    if a.ndim == 0:
        return "a_scalar"
    if a.ndim >= 1 and b.shape == a.shape[-1:] and a.ndim > 1:
        return "b_vec"
    if b.ndim >= 1 and a.shape == b.shape[-1:] and b.ndim > 1:
        return "a_vec"
    if b.shape == a.shape[:-1] + (1,):
        return "b_row"
    if a.shape == b.shape[:-1] + (1,):
        return "a_row"
    raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not an allowed pattern "
                     "(same shape, (...,H) with (H,), (...,H) with (...,1), or scalar)")


def _reduce_like(g: np.ndarray, mode: str, small_shape) -> np.ndarray:
    """Sum a full-shape gradient down to the shape of the small operand."""
    if mode.endswith("scalar"):
        return np.asarray(g.sum(), dtype=g.dtype)
    if mode.endswith("vec"):
        return g.reshape(-1, small_shape[0]).sum(axis=0)
    # row: (..., 1)
    return g.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_float("add", a, b)
    mode = _pair_mode("add", a, b)
    out = a.data + b.data
    if mode == "same":
        vjps = [(a, lambda g: g), (b, lambda g: g)]
    elif mode.startswith("b"):
        vjps = [(a, lambda g: g),
                (b, lambda g: _reduce_like(g, mode, b.shape))]
    else:
        vjps = [(a, lambda g: _reduce_like(g, mode, a.shape)),
                (b, lambda g: g)]
    return _make(out, "add", vjps)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_float("mul", a, b)
    mode = _pair_mode("mul", a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data
    if mode == "same":
        vjps = [(a, lambda g: g * bd), (b, lambda g: g * ad)]
    elif mode.startswith("b"):
        vjps = [(a, lambda g: g * bd),
                (b, lambda g: _reduce_like(g * ad, mode, b.shape))]
    else:
        vjps = [(a, lambda g: _reduce_like(g * bd, mode, a.shape)),
                (b, lambda g: g * ad)]
    return _make(out, "mul", vjps)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c
    return _make(out, "scale", [(a, lambda g: g * c)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_float("matmul", a, b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError(f"matmul: operands must be >=2-D, got {a.shape} @ {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    if ad.ndim == bd.ndim:
        if ad.shape[:-2] != bd.shape[:-2]:
            raise ValueError(f"matmul: batch dims disagree, {a.shape} @ {b.shape}")
        out = np.matmul(ad, bd)
        vjps = [(a, lambda g: np.matmul(g, bd.swapaxes(-1, -2))),
                (b, lambda g: np.matmul(ad.swapaxes(-1, -2), g))]
    elif bd.ndim == 2:
        out = np.matmul(ad, bd)
        k, n = bd.shape
        vjps = [(a, lambda g: np.matmul(g, bd.T)),
                (b, lambda g: np.matmul(ad.reshape(-1, k).T, g.reshape(-1, n)))]
    else:
        raise ValueError(f"matmul: unsupported rank combination {a.shape} @ {b.shape}")
    return _make(out, "matmul", vjps)


def transpose2d(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ValueError(f"transpose2d: needs >=2-D tensor, got shape {a.shape}")
    out = a.data.swapaxes(-1, -2).copy()
    return _make(out, "transpose2d", [(a, lambda g: g.swapaxes(-1, -2))])


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ValueError(f"reshape: cannot view {a.shape} as {shape}") from exc
    in_shape = a.data.shape
    return _make(out.copy(), "reshape", [(a, lambda g: g.reshape(in_shape))])


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat: empty input list")
    _check_float("concat", *tensors)
    nd = tensors[0].ndim
    ax = axis if axis >= 0 else axis + nd
    for t in tensors[1:]:
        if t.ndim != nd:
            raise ValueError(f"concat: rank mismatch {tensors[0].shape} vs {t.shape}")
        for d in range(nd):
            if d != ax and t.shape[d] != tensors[0].shape[d]:
                raise ValueError(f"concat: shape mismatch off axis {ax}: "
                                 f"{tensors[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    offsets = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def vjp_for(i, lo, hi):
        idx = tuple(slice(None) if d != ax else slice(lo, hi) for d in range(nd))
        return lambda g: g[idx]

    bounds = [0] + list(offsets) + [out.shape[ax]]
    vjps = [(t, vjp_for(i, bounds[i], bounds[i + 1])) for i, t in enumerate(tensors)]
    return _make(out, "concat", vjps)


def slice_tensor(a: Tensor, key) -> Tensor:
    """Basic slicing with a tuple of ``slice`` objects (rank-preserving)."""
    if not isinstance(key, tuple):
        key = (key,)
    if any(not isinstance(k, slice) for k in key):
        raise ValueError("slice: key must be a tuple of slice objects")
    if len(key) > a.ndim:
        raise ValueError(f"slice: key of length {len(key)} on {a.ndim}-D tensor")
    out = a.data[key].copy()
    in_shape = a.data.shape
    in_dtype = a.data.dtype

    def vjp(g):
        full = np.zeros(in_shape, dtype=in_dtype)
        full[key] = g
        return full

    return _make(out, "slice", [(a, vjp)])


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ValueError(f"embedding_lookup: ids must be integers, got {ids.dtype}")
    if table.ndim != 2:
        raise ValueError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding_lookup: id out of range [0, {table.shape[0]})")
    out = table.data[ids]
    tshape, tdtype = table.data.shape, table.data.dtype

    def vjp(g):
        full = np.zeros(tshape, dtype=tdtype)
        np.add.at(full, ids, g)
        return full

    return _make(out, "embedding_lookup", [(table, vjp)])


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return out * (g - dot)

    return _make(out, "softmax_lastdim", [(a, vjp)])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = a.data * s
    xd = a.data
    return _make(out, "silu", [(a, lambda g: g * (s + xd * s * (1.0 - s)))])


def mean_lastdim(a: Tensor) -> Tensor:
    if a.ndim < 1:
        raise ValueError("mean_lastdim: needs >=1-D tensor")
    h = a.shape[-1]
    out = a.data.mean(axis=-1, keepdims=True)

    def vjp(g):
        return np.repeat(g / h, h, axis=-1)

    return _make(out, "mean_lastdim", [(a, vjp)])


def rsqrt(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise ValueError("rsqrt: input must be strictly positive")
    out = 1.0 / np.sqrt(a.data)
    return _make(out, "rsqrt", [(a, lambda g: g * (-0.5) * out / a.data)])


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    shp, dt = a.data.shape, a.data.dtype
    return _make(out, "sum", [(a, lambda g: np.full(shp, g, dtype=dt))])


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Per-row negative log-likelihood: −log softmax(logits)[target]."""
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy_rows: logits must be [rows, vocab], got {logits.shape}")
    if targets.shape != (logits.shape[0],) or targets.dtype.kind not in "iu":
        raise ValueError("cross_entropy_rows: targets must be an int vector matching rows")
    v = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise ValueError(f"cross_entropy_rows: target id out of range [0, {v})")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    lse = (m + np.log(z)).reshape(-1)
    rows = np.arange(x.shape[0])
    out = lse - x[rows, targets]
    probs = e / z

    def vjp(g):
        grad = probs * g[:, None]
        grad[rows, targets] -= g
        return grad

    return _make(out, "cross_entropy_rows", [(logits, vjp)])


def where_mask(mask, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select: mask ? a : b.

    ``mask`` is non-differentiable data (numpy array or constant Tensor) and
    may broadcast from trailing dims; ``b`` may be a scalar fill constant.
    """
    if isinstance(mask, Tensor):
        if mask.requires_grad:
            raise ValueError("where_mask: mask must not require grad")
        mask = mask.data
    mask = np.asarray(mask) != 0
    _check_float("where_mask", a, b)
    if b.ndim != 0 and b.shape != a.shape:
        raise ValueError(f"where_mask: value shapes {a.shape} vs {b.shape}")
    if mask.shape != a.shape:
        if mask.shape != a.shape[a.ndim - mask.ndim:]:
            raise ValueError(f"where_mask: mask shape {mask.shape} does not match "
                             f"trailing dims of {a.shape}")
        mask = np.broadcast_to(mask, a.shape)
    out = np.where(mask, a.data, b.data)

    def vjp_b(g):
        gb = np.where(mask, 0.0, g)
        if b.ndim == 0:
            return np.asarray(gb.sum(), dtype=g.dtype)
        return gb

    return _make(out, "where_mask",
                 [(a, lambda g: np.where(mask, g, 0.0)), (b, vjp_b)])


def cast(a: Tensor, dtype) -> Tensor:
    dtype = np.dtype(dtype)
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"cast: unsupported target dtype {dtype}")
    src = a.data.dtype
    if dtype == src:
        return _make(a.data.copy(), "cast", [(a, lambda g: g)])
    out = a.data.astype(dtype)
    return _make(out, "cast", [(a, lambda g: g.astype(src))])


_OPS = {
    "matmul": matmul, "add": add, "mul": mul, "scale": scale,
    "transpose2d": transpose2d, "reshape": reshape, "concat": concat,
    "slice": slice_tensor, "embedding_lookup": embedding_lookup,
    "softmax_lastdim": softmax_lastdim, "silu": silu,
    "mean_lastdim": mean_lastdim, "rsqrt": rsqrt, "sum": sum_all,
    "cross_entropy_rows": cross_entropy_rows, "where_mask": where_mask,
    "cast": cast,
}


def apply(op_kind: str, *inputs, **params) -> Tensor:
    """Uniform dispatch over the closed op set (see module docstring)."""
    if op_kind not in _OPS:
        raise ValueError(f"unknown op {op_kind!r}; valid: {sorted(_OPS)}")
    if op_kind == "concat":
        return concat(list(inputs), **params)
    return _OPS[op_kind](*inputs, **params)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse-mode sweep from a scalar loss.

    Returns a map ``leaf tensor -> gradient tensor`` for every reachable leaf
    with ``requires_grad``; also populates each leaf's ``.grad``.  The tape is
    consumed: a second call on the same loss raises.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor loss")
    if loss.data.ndim != 0:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward on a detached graph: loss does not depend on "
                         "any tensor with requires_grad")
    if loss._consumed:
        raise RuntimeError("backward already called on this loss; run a new forward")
    loss._consumed = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp, _ in node._vjps:
            if id(inp) not in seen:
                stack.append((inp, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    leaves: dict[Tensor, Tensor] = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._vjps:
            if node.requires_grad and node._op == "leaf":
                node.grad = g if node.grad is None else node.grad + g
                leaves[node] = Tensor(g)
            continue
        for inp, vjp in node._vjps:
            contrib = vjp(g)
            prev = grads.get(id(inp))
            grads[id(inp)] = contrib if prev is None else prev + contrib
    return leaves


def finite_diff_check(f, x: Tensor, eps: float = 1e-5):
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` maps a Tensor to a scalar Tensor.  Returns
    ``(max_rel_err, analytic, numeric)`` where the relative error is
    ``|a - n| / max(1, |a|)`` elementwise.
    """
    x.grad = None
    loss = f(x)
    backward(loss)
    if x.grad is None:
        raise ValueError("finite_diff_check: f(x) does not depend on x")
    analytic = np.asarray(x.grad, dtype=np.float64).copy()

    base = x.data.copy()
    numeric = np.zeros_like(analytic)
    flat_base = base.reshape(-1)
    for i in range(flat_base.size):
        up = flat_base.copy()
        dn = flat_base.copy()
        up[i] += eps
        dn[i] -= eps
        lp = f(Tensor(up.reshape(base.shape), dtype=base.dtype)).item()
        lm = f(Tensor(dn.reshape(base.shape), dtype=base.dtype)).item()
        numeric.reshape(-1)[i] = (lp - lm) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
    return max_rel, analytic, numeric
