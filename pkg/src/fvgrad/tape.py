"""Reverse/forward-mode differentiation over numpy arrays.

Every numerical layer in this package (boundary fill, flux balance, forcing,
correction models) is written once as a plain function of ``Var`` operands and
recorded on a :class:`Tape`.  Replaying the tape forwards gives the
Jacobian-vector product, replaying it backwards gives the vector-Jacobian
product, and because each primitive's two rules are exact transposes of each
other the dot test holds to rounding for arbitrary compositions.

JVP replay accepts perturbations with extra *leading* batch axes, which is what
makes stencil-colored Jacobian assembly cheap: one recording, many probes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tape", "Var", "trace", "TracedOp", "Linearized"]


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _normalize_spec(spec, ndim):
    """Expand a getitem spec to a tuple covering all ``ndim`` axes."""
    if not isinstance(spec, tuple):
        spec = (spec,)
    if Ellipsis in spec:
        k = spec.index(Ellipsis)
        fill = ndim - (len(spec) - 1)
        spec = spec[:k] + (slice(None),) * fill + spec[k + 1:]
    if len(spec) < ndim:
        spec = spec + (slice(None),) * (ndim - len(spec))
    return spec


def _batched_spec(spec, extra):
    return (slice(None),) * extra + spec


class Node:
    __slots__ = ("op", "args", "aux", "val")

    def __init__(self, op, args, aux, val):
        self.op = op          # primitive name
        self.args = args      # tuple of (node index | raw ndarray constant)
        self.aux = aux        # primitive-specific static data
        self.val = val        # forward value (ndarray)


class Var:
    """Handle to a tape node; supports numpy-like arithmetic."""

    __slots__ = ("tape", "idx")
    __array_ufunc__ = None  # make ndarray <op> Var defer to the reflected ops

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.nodes[self.idx].val

    @property
    def shape(self):
        return self.value.shape

    # -- arithmetic sugar ---------------------------------------------------
    def __add__(self, other):
        return self.tape.push("add", (self, other))

    def __radd__(self, other):
        return self.tape.push("add", (other, self))

    def __sub__(self, other):
        return self.tape.push("sub", (self, other))

    def __rsub__(self, other):
        return self.tape.push("sub", (other, self))

    def __mul__(self, other):
        return self.tape.push("mul", (self, other))

    def __rmul__(self, other):
        return self.tape.push("mul", (other, self))

    def __truediv__(self, other):
        return self.tape.push("div", (self, other))

    def __rtruediv__(self, other):
        return self.tape.push("div", (other, self))

    def __neg__(self):
        return self.tape.push("neg", (self,))

    def __pow__(self, k):
        if not isinstance(k, (int, float)):
            raise TypeError("only constant exponents are differentiable here")
        return self.tape.push("pow", (self,), aux=float(k))

    def __getitem__(self, spec):
        spec = _normalize_spec(spec, self.value.ndim)
        return self.tape.push("getitem", (self,), aux=spec)


def _v(tape, operand):
    """Value of an operand (Var or constant)."""
    if isinstance(operand, Var):
        return operand.value
    return np.asarray(operand, dtype=float)


class Tape:
    def __init__(self):
        self.nodes = []

    def n_nodes(self):
        return len(self.nodes)

    def leaf(self, value):
        value = np.asarray(value, dtype=float)
        self.nodes.append(Node("leaf", (), None, value))
        return Var(self, len(self.nodes) - 1)

    def push(self, op, operands, aux=None):
        args = tuple(o.idx if isinstance(o, Var) else np.asarray(o, dtype=float)
                     for o in operands)
        vals = [self.nodes[a].val if isinstance(a, int) else a for a in args]
        val = _FWD[op](vals, aux)
        self.nodes.append(Node(op, args, aux, np.asarray(val, dtype=float)))
        return Var(self, len(self.nodes) - 1)

    # -- replay -------------------------------------------------------------
    def jvp(self, seeds, out_idxs):
        """Forward-linear replay.

        ``seeds`` maps leaf node index -> perturbation (may carry extra leading
        batch axes); missing leaves are treated as zero.  Returns the list of
        perturbations of ``out_idxs`` (None where structurally zero).
        """
        dots = [None] * len(self.nodes)
        for i, d in seeds.items():
            dots[i] = np.asarray(d, dtype=float)
        needed = np.zeros(len(self.nodes), dtype=bool)
        for i in out_idxs:
            needed[i] = True
        for i in range(len(self.nodes) - 1, -1, -1):
            if needed[i]:
                for a in self.nodes[i].args:
                    if isinstance(a, int):
                        needed[a] = True
        # free each dot after its last consumer to bound peak memory on
        # batched probes
        last_use = {}
        for i, node in enumerate(self.nodes):
            if not needed[i]:
                continue
            for a in node.args:
                if isinstance(a, int):
                    last_use[a] = i
        keep = set(out_idxs)
        for i, node in enumerate(self.nodes):
            if node.op == "leaf" or not needed[i]:
                continue
            vals = [self.nodes[a].val if isinstance(a, int) else a for a in node.args]
            adots = [dots[a] if isinstance(a, int) else None for a in node.args]
            if any(d is not None for d in adots):
                dots[i] = _JVP[node.op](vals, adots, node.aux, node.val)
            for a in node.args:
                if isinstance(a, int) and last_use.get(a) == i and a not in keep:
                    dots[a] = None
        out = [dots[i] for i in out_idxs]
        return out

    def vjp(self, bar_map, in_idxs):
        """Reverse replay: output cotangents -> leaf cotangents."""
        bars = [None] * len(self.nodes)
        for i, b in bar_map.items():
            b = np.asarray(b, dtype=float)
            bars[i] = b if bars[i] is None else bars[i] + b
        for i in range(len(self.nodes) - 1, -1, -1):
            node, bar = self.nodes[i], bars[i]
            if bar is None or node.op == "leaf":
                continue
            vals = [self.nodes[a].val if isinstance(a, int) else a for a in node.args]
            contribs = _VJP[node.op](vals, bar, node.aux, node.val)
            for a, c in zip(node.args, contribs):
                if not isinstance(a, int) or c is None:
                    continue
                c = _unbroadcast(c, self.nodes[a].val.shape)
                bars[a] = c if bars[a] is None else bars[a] + c
        out = []
        for i in in_idxs:
            b = bars[i]
            out.append(np.zeros_like(self.nodes[i].val) if b is None else b)
        return out


# ---------------------------------------------------------------------------
# primitive rules: forward, jvp, vjp
# ---------------------------------------------------------------------------

def _bspec(aux, d, v):
    return _batched_spec(aux, d.ndim - v.ndim)


def _dot_mul(a, b):
    return None if a is None else a * b


def _add_dots(da, db):
    if da is None:
        return db
    if db is None:
        return da
    return da + db


_FWD = {
    "add": lambda v, aux: v[0] + v[1],
    "sub": lambda v, aux: v[0] - v[1],
    "mul": lambda v, aux: v[0] * v[1],
    "div": lambda v, aux: v[0] / v[1],
    "neg": lambda v, aux: -v[0],
    "pow": lambda v, aux: v[0] ** aux,
    "sqrt": lambda v, aux: np.sqrt(v[0]),
    "exp": lambda v, aux: np.exp(v[0]),
    "log": lambda v, aux: np.log(v[0]),
    "abs": lambda v, aux: np.abs(v[0]),
    "maximum": lambda v, aux: np.maximum(v[0], v[1]),
    "minimum": lambda v, aux: np.minimum(v[0], v[1]),
    "where": lambda v, aux: np.where(aux, v[0], v[1]),
    "sigmoid": lambda v, aux: _sigmoid(np.asarray(v[0], dtype=float)),
    "softplus": lambda v, aux: np.logaddexp(0.0, v[0]),
    "getitem": lambda v, aux: v[0][aux],
    "embed": lambda v, aux: _embed_fwd(v[0], aux),
    "stack_last": lambda v, aux: np.stack(v, axis=-1),
    "sum": lambda v, aux: v[0].sum(axis=aux[0], keepdims=aux[1]),
    "matmul_last": lambda v, aux: _matmul_fwd(v[0], v[1]),
    "gather_nd": lambda v, aux: v[0][aux],
    "reshape": lambda v, aux: v[0].reshape(aux),
    "swap_grid": lambda v, aux: v[0].swapaxes(aux[0], aux[1]),
}


def _embed_fwd(x, aux):
    spec, shape = aux
    out = np.zeros(shape, dtype=float)
    out[spec] = x
    return out


def _sigmoid(x):
    x1 = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x1)
    pos = x1 >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x1[pos]))
    ex = np.exp(x1[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.reshape(np.shape(x))


def _matmul_fwd(x, w):
    """x @ w over the last axis with a fixed channel summation order.

    The explicit loop keeps the result bitwise independent of array shape
    and memory layout, which the grid-transpose equivariance of the
    directional convolutions relies on.
    """
    if w.ndim != 2:
        return x @ w
    out = np.zeros(x.shape[:-1] + (w.shape[-1],))
    for c in range(w.shape[0]):
        out += x[..., c, None] * w[c]
    return out


def _jvp_add(v, d, aux, out):
    return _add_dots(d[0], d[1])


def _jvp_sub(v, d, aux, out):
    if d[0] is None:
        return -d[1]
    if d[1] is None:
        return d[0]
    return d[0] - d[1]


def _jvp_mul(v, d, aux, out):
    return _add_dots(_dot_mul(d[0], v[1]), _dot_mul(d[1], v[0]))


def _jvp_div(v, d, aux, out):
    t = None if d[0] is None else d[0] / v[1]
    if d[1] is not None:
        t = _add_dots(t, -d[1] * v[0] / (v[1] * v[1]))
    return t


def _jvp_sum(v, d, aux, out):
    axes = aux[0]
    return d[0].sum(axis=axes, keepdims=aux[1])


def _jvp_matmul(v, d, aux, out):
    x, w = v
    t = None
    if d[0] is not None:
        t = d[0] @ w
    if d[1] is not None:
        dw = d[1]
        if dw.ndim == w.ndim:
            t = _add_dots(t, x @ dw)
        else:
            # batched parameter perturbation: contract then move batch first
            y = np.tensordot(x, dw, axes=([x.ndim - 1], [dw.ndim - 2]))
            t = _add_dots(t, np.moveaxis(y, x.ndim - 1, 0))
    return t


_JVP = {
    "add": _jvp_add,
    "sub": _jvp_sub,
    "mul": _jvp_mul,
    "div": _jvp_div,
    "neg": lambda v, d, aux, out: None if d[0] is None else -d[0],
    "pow": lambda v, d, aux, out: None if d[0] is None else aux * v[0] ** (aux - 1.0) * d[0],
    "sqrt": lambda v, d, aux, out: None if d[0] is None else 0.5 * d[0] / out,
    "exp": lambda v, d, aux, out: None if d[0] is None else out * d[0],
    "log": lambda v, d, aux, out: None if d[0] is None else d[0] / v[0],
    "abs": lambda v, d, aux, out: None if d[0] is None else np.sign(v[0]) * d[0],
    "maximum": lambda v, d, aux, out: _jvp_pick(v[0] >= v[1], d),
    "minimum": lambda v, d, aux, out: _jvp_pick(v[0] <= v[1], d),
    "where": lambda v, d, aux, out: _jvp_pick(aux, d),
    "sigmoid": lambda v, d, aux, out: None if d[0] is None else out * (1.0 - out) * d[0],
    "softplus": lambda v, d, aux, out: None if d[0] is None else d[0] * _sigmoid(np.asarray(v[0], dtype=float)),
    "getitem": lambda v, d, aux, out: None if d[0] is None else d[0][_bspec(aux, d[0], v[0])],
    "embed": lambda v, d, aux, out: _jvp_embed(v, d, aux),
    "stack_last": lambda v, d, aux, out: _jvp_stack(v, d),
    "sum": _jvp_sum,
    "matmul_last": _jvp_matmul,
    "gather_nd": lambda v, d, aux, out: None if d[0] is None else d[0][_bspec(aux, d[0], v[0])],
    "reshape": lambda v, d, aux, out: None if d[0] is None else
        d[0].reshape(d[0].shape[:d[0].ndim - v[0].ndim] + tuple(aux)),
    "swap_grid": lambda v, d, aux, out: None if d[0] is None else
        d[0].swapaxes(aux[0], aux[1]),
}


def _jvp_pick(mask, d):
    a = np.zeros(1) if d[0] is None else d[0]
    b = np.zeros(1) if d[1] is None else d[1]
    if d[0] is None and d[1] is None:
        return None
    return np.where(mask, a, b)


def _jvp_embed(v, d, aux):
    if d[0] is None:
        return None
    spec, shape = aux
    dx = d[0]
    extra = dx.ndim - v[0].ndim
    out = np.zeros(dx.shape[:extra] + tuple(shape), dtype=float)
    out[_batched_spec(spec, extra)] = dx
    return out


def _jvp_stack(v, d):
    parts = [np.zeros_like(v[k]) if d[k] is None else d[k] for k in range(len(v))]
    target = np.broadcast_shapes(*(p.shape for p in parts))
    parts = [np.broadcast_to(p, target) for p in parts]
    return np.stack(parts, axis=-1)


def _vjp_getitem(v, bar, aux, out):
    g = np.zeros_like(v[0])
    g[aux] = bar
    return (g,)


def _vjp_gather(v, bar, aux, out):
    g = np.zeros_like(v[0])
    np.add.at(g, aux, bar)
    return (g,)


def _vjp_embed(v, bar, aux, out):
    spec, _ = aux
    return (bar[spec],)


def _vjp_sum(v, bar, aux, out):
    axes, keepdims = aux
    shape = v[0].shape
    if not keepdims:
        b = np.expand_dims(bar, axes) if axes is not None else bar.reshape((1,) * len(shape))
    else:
        b = bar
    return (np.broadcast_to(b, shape),)


def _vjp_matmul(v, bar, aux, out):
    x, w = v
    gx = bar @ np.swapaxes(w, -1, -2)
    gw = np.tensordot(x, bar, axes=(tuple(range(x.ndim - 1)), tuple(range(bar.ndim - 1))))
    return (gx, gw)


_VJP = {
    "add": lambda v, bar, aux, out: (bar, bar),
    "sub": lambda v, bar, aux, out: (bar, -bar),
    "mul": lambda v, bar, aux, out: (bar * v[1], bar * v[0]),
    "div": lambda v, bar, aux, out: (bar / v[1], -bar * v[0] / (v[1] * v[1])),
    "neg": lambda v, bar, aux, out: (-bar,),
    "pow": lambda v, bar, aux, out: (bar * aux * v[0] ** (aux - 1.0),),
    "sqrt": lambda v, bar, aux, out: (bar * 0.5 / out,),
    "exp": lambda v, bar, aux, out: (bar * out,),
    "log": lambda v, bar, aux, out: (bar / v[0],),
    "abs": lambda v, bar, aux, out: (bar * np.sign(v[0]),),
    "maximum": lambda v, bar, aux, out: _vjp_pick(v[0] >= v[1], bar),
    "minimum": lambda v, bar, aux, out: _vjp_pick(v[0] <= v[1], bar),
    "where": lambda v, bar, aux, out: _vjp_pick(aux, bar),
    "sigmoid": lambda v, bar, aux, out: (bar * out * (1.0 - out),),
    "softplus": lambda v, bar, aux, out: (bar * _sigmoid(np.asarray(v[0], dtype=float)),),
    "getitem": _vjp_getitem,
    "embed": _vjp_embed,
    "stack_last": lambda v, bar, aux, out: tuple(bar[..., k] for k in range(len(v))),
    "sum": _vjp_sum,
    "matmul_last": _vjp_matmul,
    "gather_nd": _vjp_gather,
    "reshape": lambda v, bar, aux, out: (bar.reshape(v[0].shape),),
    "swap_grid": lambda v, bar, aux, out: (bar.swapaxes(aux[0], aux[1]),),
}


def _vjp_pick(mask, bar):
    z = np.zeros_like(bar)
    return (np.where(mask, bar, z), np.where(mask, z, bar))


# ---------------------------------------------------------------------------
# functional front-end used by the kernels
# ---------------------------------------------------------------------------

def _tape_of(*operands):
    for o in operands:
        if isinstance(o, Var):
            return o.tape
    raise TypeError("at least one operand must be a Var")


def sqrt(x):
    return x.tape.push("sqrt", (x,))


def exp(x):
    return x.tape.push("exp", (x,))


def log(x):
    return x.tape.push("log", (x,))


def absolute(x):
    return x.tape.push("abs", (x,))


def maximum(a, b):
    return _tape_of(a, b).push("maximum", (a, b))


def minimum(a, b):
    return _tape_of(a, b).push("minimum", (a, b))


def where(cond, a, b):
    """``cond`` is a plain boolean array (non-differentiable)."""
    return _tape_of(a, b).push("where", (a, b), aux=np.asarray(cond))


def sigmoid(x):
    return x.tape.push("sigmoid", (x,))


def softplus(x):
    return x.tape.push("softplus", (x,))


def embed(x, shape, spec):
    """Scatter ``x`` into a zero array of ``shape`` at ``spec`` (adjoint of getitem)."""
    spec = _normalize_spec(spec, len(shape))
    return x.tape.push("embed", (x,), aux=(spec, tuple(shape)))


def stack_last(parts):
    return _tape_of(*parts).push("stack_last", tuple(parts))


def asum(x, axes=None, keepdims=False):
    v = x.value
    if axes is None:
        axes = tuple(range(-v.ndim, 0)) if v.ndim else None
    elif isinstance(axes, int):
        axes = (axes - v.ndim if axes >= 0 else axes,)
    else:
        axes = tuple(ax - v.ndim if ax >= 0 else ax for ax in axes)
    return x.tape.push("sum", (x,), aux=(axes, keepdims))


def matmul_last(x, w):
    return _tape_of(x, w).push("matmul_last", (x, w))


def gather_nd(x, idx):
    """Fancy-index gather; idx is a tuple of integer arrays."""
    return x.tape.push("gather_nd", (x,), aux=tuple(np.asarray(k) for k in idx))


def reshape(x, shape):
    return x.tape.push("reshape", (x,), aux=tuple(shape))


def swap_grid(x):
    """Swap the two grid axes (always addressed from the end: -3 and -2 for
    channel-carrying arrays, -2 and -1 for plain fields)."""
    nd = x.value.ndim
    if nd == 2:
        axes = (-2, -1)
    else:
        axes = (-3, -2)
    return x.tape.push("swap_grid", (x,), aux=axes)


# ---------------------------------------------------------------------------
# tracing and the differentiable-operator contract
# ---------------------------------------------------------------------------

def trace(fn, *arrays):
    """Record ``fn`` applied to leaves for ``arrays``; returns (tape, ins, outs)."""
    tape = Tape()
    ins = [tape.leaf(a) for a in arrays]
    out = fn(*ins)
    outs = list(out) if isinstance(out, (tuple, list)) else [out]
    return tape, ins, outs


class Linearized:
    """The tangent/adjoint pair of one recorded evaluation."""

    def __init__(self, tape, ins, outs):
        self.tape = tape
        self.in_idxs = [v.idx for v in ins]
        self.out_idxs = [v.idx for v in outs]
        self.values = [v.value for v in outs]

    def jvp(self, dins):
        seeds = {i: d for i, d in zip(self.in_idxs, dins) if d is not None}
        dots = self.tape.jvp(seeds, self.out_idxs)
        return [np.zeros_like(self.tape.nodes[o].val) if d is None else d
                for o, d in zip(self.out_idxs, dots)]

    def vjp(self, dbars):
        bar_map = {o: b for o, b in zip(self.out_idxs, dbars) if b is not None}
        return self.tape.vjp(bar_map, self.in_idxs)


class TracedOp:
    """A DifferentiableOp: eval / tangent / adjoint of a recorded function.

    ``fn`` takes ``n_in`` Var leaves plus any static keyword arguments and
    returns one Var or a tuple.  Tangent and adjoint re-record at the supplied
    base point; use :meth:`linearize` directly when many probes share a point.
    """

    def __init__(self, fn, n_in, name=None):
        self.fn = fn
        self.n_in = n_in
        self.name = name or fn.__name__

    def linearize(self, *xs):
        tape, ins, outs = trace(self.fn, *xs)
        return Linearized(tape, ins, outs)

    def eval(self, *xs):
        lin = self.linearize(*xs)
        return lin.values[0] if len(lin.values) == 1 else lin.values

    def tangent(self, xs, dxs):
        lin = self.linearize(*xs)
        dots = lin.jvp(list(dxs))
        return dots[0] if len(dots) == 1 else dots

    def adjoint(self, xs, dbars):
        lin = self.linearize(*xs)
        if not isinstance(dbars, (tuple, list)):
            dbars = [dbars]
        bars = lin.vjp(list(dbars))
        return bars[0] if len(bars) == 1 else bars
