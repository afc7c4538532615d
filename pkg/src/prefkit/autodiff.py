"""Reverse-mode autodiff over float64 numpy arrays.

Every value lives in a Tensor; ops record their parents and a backward
closure on a tape. backward() walks the tape in reverse topological
order and accumulates gradients into .grad. All arithmetic is plain
sequential numpy in float64, so results are bit-identical run to run.
"""

import numpy as np

from .errors import ContractViolation

_GELU_C = np.sqrt(2.0 / np.pi)


class Tensor:
    """A float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backfn")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backfn = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != ():
            raise ContractViolation("item() needs a scalar tensor")
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut out of the graph."""
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad for every reachable leaf.

        Repeated calls without zero_grad add up. The root must be a
        scalar that requires grad.
        """
        if self.data.shape != ():
            raise ContractViolation("backward() root must be a scalar")
        if not self.requires_grad:
            raise ContractViolation("backward() root does not require grad")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        # per-call gradients flow through gmap; .grad only collects the
        # finished per-node totals, so repeated backward calls add exactly
        # one copy each instead of compounding stale intermediate grads
        gmap = {id(self): np.ones(())}
        for node in reversed(topo):
            g = gmap.get(id(node))
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backfn is None:
                continue
            for parent, pg in zip(node._parents, node._backfn(g)):
                if parent.requires_grad and pg is not None:
                    cur = gmap.get(id(parent))
                    gmap[id(parent)] = pg if cur is None else cur + pg

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backfn) -> Tensor:
    """Internal node constructor; skips the finiteness re-check."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = any(p.requires_grad for p in parents)
    t.grad = None
    if t.requires_grad:
        t._parents = tuple(parents)
        t._backfn = backfn
    else:
        t._parents = ()
        t._backfn = None
    return t


def _unbroadcast(g, shape):
    """Sum g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backfn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), backfn)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backfn(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make(out, (a, b), backfn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product (m,k) @ (k,n) -> (m,n)."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolation("matmul expects 2-D operands")
    out = a.data @ b.data

    def backfn(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), backfn)


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (g.T,))


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements -> scalar."""
    out = np.asarray(a.data.sum())

    def backfn(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _make(out, (a,), backfn)


def tmean(a: Tensor) -> Tensor:
    """Mean of all elements -> scalar."""
    n = a.data.size
    out = np.asarray(a.data.sum() / n)

    def backfn(g):
        return (np.broadcast_to(g / n, a.data.shape),)

    return _make(out, (a,), backfn)


def relu(a: Tensor) -> Tensor:
    """max(0, x); subgradient 0 at exactly 0."""
    mask = a.data > 0.0
    out = np.where(mask, a.data, 0.0)

    def backfn(g):
        return (g * mask,)

    return _make(out, (a,), backfn)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backfn(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
        return (g * dy,)

    return _make(out, (a,), backfn)


def _sigmoid(x):
    # evaluate exp only on the non-overflowing side
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x), overflow-safe at both ends."""
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def backfn(g):
        return (g * (1.0 - _sigmoid(np.atleast_1d(x)).reshape(x.shape)),)

    return _make(out, (a,), backfn)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-shifted for stability."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backfn(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (a,), backfn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = (x.data - mu) * inv
    out = xh * gamma.data + beta.data
    lead = tuple(range(x.data.ndim - 1))

    def backfn(g):
        dxh = g * gamma.data
        dmean = dxh.mean(axis=-1, keepdims=True)
        dproj = (dxh * xh).mean(axis=-1, keepdims=True)
        dx = (dxh - dmean - xh * dproj) * inv
        dgamma = (g * xh).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), backfn)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: (V,d) table gathered at int ids (T,) -> (T,d)."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ContractViolation("embedding ids must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ContractViolation("embedding id out of range")
    out = table.data[idx]

    def backfn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(out, (table,), backfn)


def gather_logprobs(logits: Tensor, targets) -> Tensor:
    """Per-row log softmax picked at targets: (T,V), (T,) -> (T,)."""
    idx = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != logits.data.shape[0]:
        raise ContractViolation("gather_logprobs expects (T,V) logits and (T,) targets")
    if idx.size and (idx.min() < 0 or idx.max() >= logits.data.shape[1]):
        raise ContractViolation("target id out of range")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    lp = z - lse
    rows = np.arange(idx.shape[0])
    out = lp[rows, idx]

    def backfn(g):
        dlogits = -np.exp(lp) * g[:, None]
        dlogits[rows, idx] += g
        return (dlogits,)

    return _make(out, (logits,), backfn)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 0."""
    out = a.data[start:stop]

    def backfn(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        return (ga,)

    return _make(out, (a,), backfn)


def concat_cols(parts) -> Tensor:
    """Concatenate 2-D tensors along axis 1."""
    parts = tuple(parts)
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]

    def backfn(g):
        gs = []
        at = 0
        for w in widths:
            gs.append(g[:, at:at + w])
            at += w
        return tuple(gs)

    return _make(out, parts, backfn)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 1 of a 2-D tensor."""
    out = a.data[:, start:stop]

    def backfn(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return (ga,)

    return _make(out, (a,), backfn)
