"""Dense-graph automatic differentiation on numpy arrays.

Two cooperating mechanisms:

* a reverse-mode ``Tape`` whose nodes hold array values and record enough
  to run one vector-Jacobian sweep, and
* forward-mode ``Dual`` pairs whose propagation rules are written in terms
  of the same primitive operations, so a dual pass can ride on top of a
  tape.

That combination computes directional second-order quantities without
materializing any Hessian: seed the input tangent with a direction, read
the tangent of the output (a Jacobian-vector product), build a scalar from
it, then run a single reverse sweep with respect to the parameters.

All values are float64; payloads of a Dual may be plain arrays or tape
variables interchangeably.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "AutodiffError",
    "NonFiniteError",
    "UnsupportedPrimitiveError",
    "Tape",
    "Var",
    "Dual",
    "grad",
    "jvp",
    "grad_through_jvp",
    "finite_diff_check",
    "finite_diff_grad",
    "value_of",
    "exp",
    "log",
    "tanh",
    "softplus",
    "sigmoid",
    "dot",
    "rowdot",
    "matmul",
    "matvec",
    "transpose",
    "add_rowvec",
    "vsum",
    "affine",
]


class AutodiffError(Exception):
    pass


class NonFiniteError(AutodiffError):
    """A primitive produced a non-finite value; carries the node id."""

    def __init__(self, node_id, op):
        self.node_id = node_id
        self.op = op
        super().__init__(f"non-finite value at node {node_id} (op {op!r})")


class UnsupportedPrimitiveError(AutodiffError):
    pass


def _arr(x):
    return np.asarray(x, dtype=np.float64)


def _np_sigmoid(x):
    # tanh form stays finite for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _np_softplus(x):
    return np.logaddexp(0.0, x)


class _Node:
    __slots__ = ("op", "inputs", "value")

    def __init__(self, op, inputs, value):
        self.op = op
        self.inputs = inputs
        self.value = value


class Var:
    """Handle to a tape node. Supports the primitive operator set only."""

    __slots__ = ("tape", "i")
    __array_ufunc__ = None  # keep numpy from absorbing us into object arrays

    def __init__(self, tape, i):
        self.tape = tape
        self.i = i

    @property
    def value(self):
        return self.tape.nodes[self.i].value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __neg__(self):
        return _neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, other):
        raise UnsupportedPrimitiveError(
            "pow is not a supported primitive; compose mul/exp/log instead"
        )

    def __repr__(self):
        return f"Var(node={self.i}, shape={self.value.shape})"


class Tape:
    """Append-only record of primitive operations, reverse-swept once.

    Nodes are topologically ordered by construction (an op can only consume
    already-recorded nodes). A tape is single-writer while being built and
    read-only afterwards.
    """

    def __init__(self):
        self.nodes = []

    def leaf(self, value):
        return self._record("leaf", (), _arr(value))

    def _record(self, op, inputs, value):
        value = np.asarray(value, dtype=np.float64)
        if not np.isfinite(value).all():
            raise NonFiniteError(len(self.nodes), op)
        self.nodes.append(_Node(op, inputs, value))
        return Var(self, len(self.nodes) - 1)

    def _lift(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise AutodiffError("variables belong to different tapes")
            return x
        return self.leaf(_arr(x))

    def backward(self, out):
        """Reverse sweep from a scalar output; returns adjoints by node id."""
        if not isinstance(out, Var) or out.tape is not self:
            raise AutodiffError("backward needs a scalar Var on this tape")
        if out.value.shape != ():
            raise AutodiffError("reverse sweep requires a scalar output")
        adj = [None] * len(self.nodes)
        adj[out.i] = np.float64(1.0)
        nodes = self.nodes
        for i in range(out.i, -1, -1):
            g = adj[i]
            if g is None:
                continue
            node = nodes[i]
            rule = _VJP.get(node.op)
            if rule is None:
                continue  # leaf
            for j, contrib in rule(nodes, node, g):
                if adj[j] is None:
                    adj[j] = contrib
                else:
                    adj[j] = adj[j] + contrib
        return adj

    def gradients(self, out, leaves):
        adj = self.backward(out)
        out_grads = []
        for v in leaves:
            g = adj[v.i]
            if g is None:
                g = np.zeros_like(v.value)
            out_grads.append(np.broadcast_to(g, v.value.shape).astype(np.float64))
        return out_grads


def _unbroadcast(g, shape):
    g = np.asarray(g, dtype=np.float64)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


_VJP = {
    "add": lambda nodes, nd, g: (
        (nd.inputs[0], _unbroadcast(g, nodes[nd.inputs[0]].value.shape)),
        (nd.inputs[1], _unbroadcast(g, nodes[nd.inputs[1]].value.shape)),
    ),
    "sub": lambda nodes, nd, g: (
        (nd.inputs[0], _unbroadcast(g, nodes[nd.inputs[0]].value.shape)),
        (nd.inputs[1], _unbroadcast(-g, nodes[nd.inputs[1]].value.shape)),
    ),
    "neg": lambda nodes, nd, g: ((nd.inputs[0], -g),),
    "mul": lambda nodes, nd, g: (
        (nd.inputs[0], _unbroadcast(g * nodes[nd.inputs[1]].value, nodes[nd.inputs[0]].value.shape)),
        (nd.inputs[1], _unbroadcast(g * nodes[nd.inputs[0]].value, nodes[nd.inputs[1]].value.shape)),
    ),
    "div": lambda nodes, nd, g: (
        (nd.inputs[0], _unbroadcast(g / nodes[nd.inputs[1]].value, nodes[nd.inputs[0]].value.shape)),
        (
            nd.inputs[1],
            _unbroadcast(
                -g * nodes[nd.inputs[0]].value / nodes[nd.inputs[1]].value ** 2,
                nodes[nd.inputs[1]].value.shape,
            ),
        ),
    ),
    "exp": lambda nodes, nd, g: ((nd.inputs[0], g * nd.value),),
    "log": lambda nodes, nd, g: ((nd.inputs[0], g / nodes[nd.inputs[0]].value),),
    "tanh": lambda nodes, nd, g: ((nd.inputs[0], g * (1.0 - nd.value**2)),),
    "softplus": lambda nodes, nd, g: (
        (nd.inputs[0], g * _np_sigmoid(nodes[nd.inputs[0]].value)),
    ),
    "sigmoid": lambda nodes, nd, g: ((nd.inputs[0], g * nd.value * (1.0 - nd.value)),),
    "matmul": lambda nodes, nd, g: (
        (nd.inputs[0], g @ nodes[nd.inputs[1]].value.T),
        (nd.inputs[1], nodes[nd.inputs[0]].value.T @ g),
    ),
    "matvec": lambda nodes, nd, g: (
        (nd.inputs[0], np.outer(g, nodes[nd.inputs[1]].value)),
        (nd.inputs[1], nodes[nd.inputs[0]].value.T @ g),
    ),
    "transpose": lambda nodes, nd, g: ((nd.inputs[0], g.T),),
    "add_rowvec": lambda nodes, nd, g: (
        (nd.inputs[0], g),
        (nd.inputs[1], g.sum(axis=0)),
    ),
    "rowdot": lambda nodes, nd, g: (
        (nd.inputs[0], g[:, None] * nodes[nd.inputs[1]].value),
        (nd.inputs[1], g[:, None] * nodes[nd.inputs[0]].value),
    ),
    "dot": lambda nodes, nd, g: (
        (nd.inputs[0], g * nodes[nd.inputs[1]].value),
        (nd.inputs[1], g * nodes[nd.inputs[0]].value),
    ),
    "vsum": lambda nodes, nd, g: (
        (nd.inputs[0], np.full(nodes[nd.inputs[0]].value.shape, g)),
    ),
}


# ---------------------------------------------------------------------------
# forward-mode duals


class Dual:
    """(primal, tangent) pair; tangent None encodes an exact zero."""

    __slots__ = ("primal", "tangent")
    __array_ufunc__ = None

    def __init__(self, primal, tangent=None):
        self.primal = primal if isinstance(primal, (Var, Dual)) else _arr(primal)
        if tangent is not None and not isinstance(tangent, Var):
            tangent = _arr(tangent)
        self.tangent = tangent

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __neg__(self):
        return _neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, other):
        raise UnsupportedPrimitiveError(
            "pow is not a supported primitive; compose mul/exp/log instead"
        )


def _as_dual(x):
    return x if isinstance(x, Dual) else Dual(x, None)


def value_of(x):
    """Primal numpy value of an array, Var, or Dual."""
    if isinstance(x, Dual):
        return value_of(x.primal)
    if isinstance(x, Var):
        return x.value
    return _arr(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


# ---------------------------------------------------------------------------
# primitive dispatch: Dual first, then Var (tape record), then numpy


def _add(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        da, db = _as_dual(a), _as_dual(b)
        if da.tangent is None:
            t = db.tangent
        elif db.tangent is None:
            t = da.tangent
        else:
            t = _add(da.tangent, db.tangent)
        return Dual(_add(da.primal, db.primal), t)
    tape = _tape_of(a, b)
    if tape is not None:
        va, vb = tape._lift(a), tape._lift(b)
        return tape._record("add", (va.i, vb.i), va.value + vb.value)
    return np.add(_arr(a), _arr(b))


def _sub(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        da, db = _as_dual(a), _as_dual(b)
        if da.tangent is None:
            t = None if db.tangent is None else _neg(db.tangent)
        elif db.tangent is None:
            t = da.tangent
        else:
            t = _sub(da.tangent, db.tangent)
        return Dual(_sub(da.primal, db.primal), t)
    tape = _tape_of(a, b)
    if tape is not None:
        va, vb = tape._lift(a), tape._lift(b)
        return tape._record("sub", (va.i, vb.i), va.value - vb.value)
    return np.subtract(_arr(a), _arr(b))


def _neg(a):
    if isinstance(a, Dual):
        return Dual(_neg(a.primal), None if a.tangent is None else _neg(a.tangent))
    if isinstance(a, Var):
        return a.tape._record("neg", (a.i,), -a.value)
    return np.negative(_arr(a))


def _mul(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        da, db = _as_dual(a), _as_dual(b)
        if da.tangent is None:
            t = None if db.tangent is None else _mul(da.primal, db.tangent)
        elif db.tangent is None:
            t = _mul(da.tangent, db.primal)
        else:
            t = _add(_mul(da.tangent, db.primal), _mul(da.primal, db.tangent))
        return Dual(_mul(da.primal, db.primal), t)
    tape = _tape_of(a, b)
    if tape is not None:
        va, vb = tape._lift(a), tape._lift(b)
        return tape._record("mul", (va.i, vb.i), va.value * vb.value)
    return np.multiply(_arr(a), _arr(b))


def _div(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        da, db = _as_dual(a), _as_dual(b)
        val = _div(da.primal, db.primal)
        if db.tangent is None:
            t = None if da.tangent is None else _div(da.tangent, db.primal)
        else:
            num = (
                _neg(_mul(val, db.tangent))
                if da.tangent is None
                else _sub(da.tangent, _mul(val, db.tangent))
            )
            t = _div(num, db.primal)
        return Dual(val, t)
    tape = _tape_of(a, b)
    if tape is not None:
        va, vb = tape._lift(a), tape._lift(b)
        return tape._record("div", (va.i, vb.i), va.value / vb.value)
    return np.divide(_arr(a), _arr(b))


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.primal)
        return Dual(e, None if x.tangent is None else _mul(e, x.tangent))
    if isinstance(x, Var):
        return x.tape._record("exp", (x.i,), np.exp(x.value))
    return np.exp(_arr(x))


def log(x):
    if isinstance(x, Dual):
        return Dual(log(x.primal), None if x.tangent is None else _div(x.tangent, x.primal))
    if isinstance(x, Var):
        return x.tape._record("log", (x.i,), np.log(x.value))
    return np.log(_arr(x))


def tanh(x):
    if isinstance(x, Dual):
        y = tanh(x.primal)
        if x.tangent is None:
            return Dual(y, None)
        return Dual(y, _mul(_sub(1.0, _mul(y, y)), x.tangent))
    if isinstance(x, Var):
        return x.tape._record("tanh", (x.i,), np.tanh(x.value))
    return np.tanh(_arr(x))


def sigmoid(x):
    if isinstance(x, Dual):
        s = sigmoid(x.primal)
        if x.tangent is None:
            return Dual(s, None)
        return Dual(s, _mul(_mul(s, _sub(1.0, s)), x.tangent))
    if isinstance(x, Var):
        return x.tape._record("sigmoid", (x.i,), _np_sigmoid(x.value))
    return _np_sigmoid(_arr(x))


def softplus(x):
    if isinstance(x, Dual):
        if x.tangent is None:
            return Dual(softplus(x.primal), None)
        return Dual(softplus(x.primal), _mul(sigmoid(x.primal), x.tangent))
    if isinstance(x, Var):
        return x.tape._record("softplus", (x.i,), _np_softplus(x.value))
    return _np_softplus(_arr(x))


def matmul(a, b):
    """2-D @ 2-D matrix product."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        da, db = _as_dual(a), _as_dual(b)
        if da.tangent is None:
            t = None if db.tangent is None else matmul(da.primal, db.tangent)
        elif db.tangent is None:
            t = matmul(da.tangent, db.primal)
        else:
            t = _add(matmul(da.tangent, db.primal), matmul(da.primal, db.tangent))
        return Dual(matmul(da.primal, db.primal), t)
    tape = _tape_of(a, b)
    if tape is not None:
        va, vb = tape._lift(a), tape._lift(b)
        return tape._record("matmul", (va.i, vb.i), va.value @ vb.value)
    return np.matmul(_arr(a), _arr(b))


def matvec(w, x):
    """Matrix (m, n) applied to vector (n,) -> (m,)."""
    if isinstance(w, Dual) or isinstance(x, Dual):
        dw, dx = _as_dual(w), _as_dual(x)
        if dw.tangent is None:
            t = None if dx.tangent is None else matvec(dw.primal, dx.tangent)
        elif dx.tangent is None:
            t = matvec(dw.tangent, dx.primal)
        else:
            t = _add(matvec(dw.tangent, dx.primal), matvec(dw.primal, dx.tangent))
        return Dual(matvec(dw.primal, dx.primal), t)
    tape = _tape_of(w, x)
    if tape is not None:
        vw, vx = tape._lift(w), tape._lift(x)
        return tape._record("matvec", (vw.i, vx.i), vw.value @ vx.value)
    return np.matmul(_arr(w), _arr(x))


def transpose(a):
    if isinstance(a, Dual):
        return Dual(transpose(a.primal), None if a.tangent is None else transpose(a.tangent))
    if isinstance(a, Var):
        return a.tape._record("transpose", (a.i,), a.value.T)
    return _arr(a).T


def add_rowvec(x, v):
    """Add a row vector (d,) to every row of a matrix (n, d)."""
    if isinstance(x, Dual) or isinstance(v, Dual):
        dx, dv = _as_dual(x), _as_dual(v)
        if dx.tangent is None:
            t = None if dv.tangent is None else add_rowvec(_mul(0.0, dx.primal), dv.tangent)
        elif dv.tangent is None:
            t = dx.tangent
        else:
            t = add_rowvec(dx.tangent, dv.tangent)
        return Dual(add_rowvec(dx.primal, dv.primal), t)
    tape = _tape_of(x, v)
    if tape is not None:
        vx, vv = tape._lift(x), tape._lift(v)
        return tape._record("add_rowvec", (vx.i, vv.i), vx.value + vv.value[None, :])
    return _arr(x) + _arr(v)[None, :]


def rowdot(a, b):
    """Per-row inner products of two (n, d) matrices -> (n,)."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        da, db = _as_dual(a), _as_dual(b)
        if da.tangent is None:
            t = None if db.tangent is None else rowdot(da.primal, db.tangent)
        elif db.tangent is None:
            t = rowdot(da.tangent, db.primal)
        else:
            t = _add(rowdot(da.tangent, db.primal), rowdot(da.primal, db.tangent))
        return Dual(rowdot(da.primal, db.primal), t)
    tape = _tape_of(a, b)
    if tape is not None:
        va, vb = tape._lift(a), tape._lift(b)
        return tape._record("rowdot", (va.i, vb.i), np.einsum("ij,ij->i", va.value, vb.value))
    return np.einsum("ij,ij->i", _arr(a), _arr(b))


def dot(a, b):
    """Inner product of two vectors -> scalar."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        da, db = _as_dual(a), _as_dual(b)
        if da.tangent is None:
            t = None if db.tangent is None else dot(da.primal, db.tangent)
        elif db.tangent is None:
            t = dot(da.tangent, db.primal)
        else:
            t = _add(dot(da.tangent, db.primal), dot(da.primal, db.tangent))
        return Dual(dot(da.primal, db.primal), t)
    tape = _tape_of(a, b)
    if tape is not None:
        va, vb = tape._lift(a), tape._lift(b)
        return tape._record("dot", (va.i, vb.i), np.dot(va.value, vb.value))
    return np.dot(_arr(a), _arr(b))


def vsum(x):
    """Sum of all entries -> scalar."""
    if isinstance(x, Dual):
        return Dual(vsum(x.primal), None if x.tangent is None else vsum(x.tangent))
    if isinstance(x, Var):
        return x.tape._record("vsum", (x.i,), np.sum(x.value))
    return np.sum(_arr(x))


def affine(x, w, b):
    """x @ w.T + b for a batch matrix x (n, in); w is (out, in), b is (out,).

    A 1-D x is treated as a single sample and returns a 1-D result.
    """
    if value_of(x).ndim == 1:
        return _add(matvec(w, x), b)
    return add_rowvec(matmul(x, transpose(w)), b)


# ---------------------------------------------------------------------------
# user-facing drivers


def grad(f, x):
    """Gradient of a scalar-valued ``f`` at vector ``x`` by one reverse sweep.

    ``f`` must be written with the primitives of this module; evaluating it
    through the tape leaves the primal result bit-identical to an untaped
    evaluation.
    """
    tape = Tape()
    xv = tape.leaf(_arr(x))
    out = f(xv)
    if not isinstance(out, Var):
        return np.zeros_like(_arr(x))
    return tape.gradients(out, [xv])[0]


def jvp(g, x, v):
    """Forward-mode evaluation of ``g`` at ``x`` along direction ``v``.

    Returns ``(g(x), J_g(x) v)``. ``x`` and ``v`` must have equal shapes.
    """
    x = _arr(x)
    v = _arr(v)
    if x.shape != v.shape:
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, v has shape {v.shape}")
    out = g(Dual(x, v))
    if not isinstance(out, Dual):
        return value_of(out), np.zeros_like(value_of(out))
    val = value_of(out.primal)
    tan = np.zeros_like(val) if out.tangent is None else value_of(out.tangent)
    return val, tan


def grad_through_jvp(loss, params, x, v):
    """Gradient w.r.t. ``params`` of a scalar loss that internally uses jvp.

    ``loss(param_vars, x, v)`` receives one tape Var per parameter array and
    may propagate Duals through them; the returned list matches ``params``.
    """
    tape = Tape()
    pvars = [tape.leaf(_arr(p)) for p in params]
    out = loss(pvars, _arr(x), _arr(v))
    if not isinstance(out, Var):
        out_val = _arr(out)
        if not np.isfinite(out_val).all():
            raise NonFiniteError(-1, "loss")
        return [np.zeros_like(_arr(p)) for p in params]
    if not np.isfinite(out.value).all():
        raise NonFiniteError(out.i, "loss")
    return tape.gradients(out, pvars)


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``."""
    x = _arr(x)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        step = h * max(1.0, abs(flat[i]))
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def finite_diff_check(f, x, analytic_grad, h=1e-5):
    """Max over coordinates of |central difference - analytic| / (|analytic| + 1e-12)."""
    if h <= 0:
        raise ValueError("finite-difference step h must be positive")
    analytic = _arr(analytic_grad)
    fd = finite_diff_grad(f, x, h)
    return float(np.max(np.abs(fd - analytic) / (np.abs(analytic) + 1e-12)))
