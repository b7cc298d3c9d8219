"""Scalar automatic differentiation on explicit expression graphs.

Provides exact reverse-mode gradients of scalar functions with respect to
parameter vectors, forward-mode (dual-number) first and second derivatives
of network outputs with respect to spatial inputs, and dense Hessians for
diagnostics (forward-over-reverse).

Functions are expressed by tracing: a callable receives a list of `Expr`
leaves (parameters and/or inputs) and combines them with the overloaded
operators and the generic math helpers `exp`, `log`, `sin`, `cos`, `tanh`
exported here.  The same callable can therefore be evaluated on plain
floats, on graph nodes, or on `DualValue` objects.

Every graph is rebuilt per evaluation point; a single graph must not be
evaluated concurrently.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

__all__ = [
    "Expr",
    "DualValue",
    "EvaluationError",
    "constant",
    "parameters",
    "inputs",
    "exp",
    "log",
    "sin",
    "cos",
    "tanh",
    "expr_sum",
    "grad",
    "value_and_grad",
    "input_derivative",
    "mixed_input_gradient",
    "hessian",
    "HESSIAN_DIM_GUARD",
]

HESSIAN_DIM_GUARD = 4000

_ids = itertools.count()


class EvaluationError(ArithmeticError):
    """A graph node produced a non-finite or undefined value."""


class Expr:
    """One node of an expression DAG.

    ``op`` is one of ``const``, ``input``, ``param``, the binary ops
    ``add sub mul div pow`` or the unary ops ``neg exp log sin cos tanh``.
    Children always predate their parents, so ascending creation ``_id``
    is a topological order and the graph is acyclic by construction.
    """

    __slots__ = ("op", "args", "value", "adj", "index", "_id")

    def __init__(self, op, args=(), value=None, index=None):
        self.op = op
        self.args = args
        self.value = value
        self.adj = None
        self.index = index
        self._id = next(_ids)

    # -- graph building -------------------------------------------------
    # binary ops defer to DualValue (NotImplemented) so Expr payloads can
    # ride inside duals when building derivative graphs

    @staticmethod
    def _wrap(x):
        if isinstance(x, Expr):
            return x
        return Expr("const", value=float(x))

    def __add__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        return Expr("add", (self, Expr._wrap(other)))

    def __radd__(self, other):
        return Expr("add", (Expr._wrap(other), self))

    def __sub__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        return Expr("sub", (self, Expr._wrap(other)))

    def __rsub__(self, other):
        return Expr("sub", (Expr._wrap(other), self))

    def __mul__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        return Expr("mul", (self, Expr._wrap(other)))

    def __rmul__(self, other):
        return Expr("mul", (Expr._wrap(other), self))

    def __truediv__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        return Expr("div", (self, Expr._wrap(other)))

    def __rtruediv__(self, other):
        return Expr("div", (Expr._wrap(other), self))

    def __pow__(self, other):
        if isinstance(other, DualValue):
            return NotImplemented
        if isinstance(other, Expr) and other.op != "const":
            return Expr("exp", (Expr("log", (self,)) * other,))
        return Expr("pow", (self, Expr._wrap(other)))

    def __rpow__(self, other):
        return Expr._wrap(other).__pow__(self)

    def __neg__(self):
        return Expr("neg", (self,))


def constant(value):
    return Expr("const", value=float(value))


def parameters(n):
    """n fresh parameter leaves (gradient targets)."""
    return [Expr("param", index=i) for i in range(n)]


def inputs(n):
    """n fresh input leaves (spatial coordinates)."""
    return [Expr("input", index=i) for i in range(n)]


def expr_sum(terms):
    """Balanced sum; keeps graph depth logarithmic in len(terms)."""
    terms = list(terms)
    if not terms:
        return constant(0.0)
    while len(terms) > 1:
        nxt = [a + b for a, b in zip(terms[::2], terms[1::2])]
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    return Expr._wrap(terms[0])


# -- generic math on float | DualValue | Expr ---------------------------


def exp(x):
    if isinstance(x, Expr):
        return Expr("exp", (x,))
    if isinstance(x, DualValue):
        e = exp(x.primal)
        return DualValue(e, x.tangent * e)
    return math.exp(x)


def log(x):
    if isinstance(x, Expr):
        return Expr("log", (x,))
    if isinstance(x, DualValue):
        return DualValue(log(x.primal), x.tangent / x.primal)
    return math.log(x)


def sin(x):
    if isinstance(x, Expr):
        return Expr("sin", (x,))
    if isinstance(x, DualValue):
        return DualValue(sin(x.primal), x.tangent * cos(x.primal))
    return math.sin(x)


def cos(x):
    if isinstance(x, Expr):
        return Expr("cos", (x,))
    if isinstance(x, DualValue):
        return DualValue(cos(x.primal), -x.tangent * sin(x.primal))
    return math.cos(x)


def tanh(x):
    if isinstance(x, Expr):
        return Expr("tanh", (x,))
    if isinstance(x, DualValue):
        t = tanh(x.primal)
        return DualValue(t, x.tangent * (1.0 - t * t))
    return math.tanh(x)


class DualValue:
    """Forward-mode pair (primal, tangent) obeying the chain rule.

    Components may themselves be DualValue (nested duals give second
    directional derivatives) or Expr (building derivative graphs).
    """

    __slots__ = ("primal", "tangent")

    def __init__(self, primal, tangent=0.0):
        self.primal = primal
        self.tangent = tangent

    @staticmethod
    def _wrap(x):
        return x if isinstance(x, DualValue) else DualValue(x, 0.0)

    def __add__(self, other):
        o = DualValue._wrap(other)
        return DualValue(self.primal + o.primal, self.tangent + o.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        o = DualValue._wrap(other)
        return DualValue(self.primal - o.primal, self.tangent - o.tangent)

    def __rsub__(self, other):
        o = DualValue._wrap(other)
        return DualValue(o.primal - self.primal, o.tangent - self.tangent)

    def __mul__(self, other):
        o = DualValue._wrap(other)
        return DualValue(
            self.primal * o.primal,
            self.tangent * o.primal + self.primal * o.tangent,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = DualValue._wrap(other)
        q = self.primal / o.primal
        return DualValue(q, (self.tangent - q * o.tangent) / o.primal)

    def __rtruediv__(self, other):
        return DualValue._wrap(other).__truediv__(self)

    def __neg__(self):
        return DualValue(-self.primal, -self.tangent)

    def __pow__(self, c):
        # constant exponent only; general powers go through exp/log
        c = float(c)
        p = self.primal**c
        return DualValue(p, c * self.primal ** (c - 1.0) * self.tangent)


def _is_finite(v):
    if isinstance(v, DualValue):
        return _is_finite(v.primal) and _is_finite(v.tangent)
    return math.isfinite(v)


def _reachable(root):
    """Reachable nodes of `root`, topologically ordered (children first)."""
    seen = {id(root): root}
    stack = [root]
    while stack:
        node = stack.pop()
        for a in node.args:
            if id(a) not in seen:
                seen[id(a)] = a
                stack.append(a)
    return sorted(seen.values(), key=lambda n: n._id)


def _forward(nodes, param_values, input_values=None):
    for node in nodes:
        op = node.op
        if op == "const":
            pass
        elif op == "param":
            node.value = param_values[node.index]
        elif op == "input":
            node.value = input_values[node.index]
        else:
            try:
                if op == "add":
                    node.value = node.args[0].value + node.args[1].value
                elif op == "sub":
                    node.value = node.args[0].value - node.args[1].value
                elif op == "mul":
                    node.value = node.args[0].value * node.args[1].value
                elif op == "div":
                    node.value = node.args[0].value / node.args[1].value
                elif op == "pow":
                    node.value = node.args[0].value ** node.args[1].value
                elif op == "neg":
                    node.value = -node.args[0].value
                elif op == "exp":
                    node.value = exp(node.args[0].value)
                elif op == "log":
                    node.value = log(node.args[0].value)
                elif op == "sin":
                    node.value = sin(node.args[0].value)
                elif op == "cos":
                    node.value = cos(node.args[0].value)
                elif op == "tanh":
                    node.value = tanh(node.args[0].value)
                else:  # pragma: no cover
                    raise AssertionError(f"unknown op {op!r}")
            except (ValueError, ZeroDivisionError, OverflowError) as e:
                raise EvaluationError(
                    f"evaluation failed in '{op}' node: {e}"
                ) from e
        if node.value is not None and not _is_finite(node.value):
            raise EvaluationError(f"non-finite value in '{op}' node")


def _backward(nodes, root):
    """Accumulate adjoints; node values may be floats or DualValues."""
    for node in nodes:
        node.adj = None
    root.adj = 1.0
    for node in reversed(nodes):
        g = node.adj
        if g is None:
            continue
        op = node.op
        if op in ("const", "param", "input"):
            continue
        a = node.args[0]
        b = node.args[1] if len(node.args) > 1 else None
        try:
            if op == "add":
                _acc(a, g)
                _acc(b, g)
            elif op == "sub":
                _acc(a, g)
                _acc(b, -g)
            elif op == "mul":
                _acc(a, g * b.value)
                _acc(b, g * a.value)
            elif op == "div":
                _acc(a, g / b.value)
                _acc(b, -g * node.value / b.value)
            elif op == "pow":
                # exponent is always a constant node (general powers are
                # lowered to exp(log(a)*b) at build time)
                _acc(a, g * b.value * a.value ** (b.value - 1.0))
            elif op == "neg":
                _acc(a, -g)
            elif op == "exp":
                _acc(a, g * node.value)
            elif op == "log":
                _acc(a, g / a.value)
            elif op == "sin":
                _acc(a, g * cos(a.value))
            elif op == "cos":
                _acc(a, -g * sin(a.value))
            elif op == "tanh":
                _acc(a, g * (1.0 - node.value * node.value))
        except (ValueError, ZeroDivisionError, OverflowError) as e:
            raise EvaluationError(
                f"derivative evaluation failed in '{op}' node: {e}"
            ) from e


def _acc(node, g):
    node.adj = g if node.adj is None else node.adj + g


def _trace(scalar_fn, n):
    params = parameters(n)
    root = scalar_fn(params)
    if not isinstance(root, Expr):
        root = Expr._wrap(root)
    nodes = _reachable(root)
    leaves = [p for p in params]
    return root, nodes, leaves


def value_and_grad(scalar_fn, at):
    """Value and exact gradient of ``scalar_fn`` at the parameter vector ``at``.

    ``scalar_fn`` receives a list of Expr leaves and must return an Expr
    built from the supported primitives.
    """
    at = np.asarray(at, dtype=float)
    root, nodes, leaves = _trace(scalar_fn, at.size)
    _forward(nodes, at)
    _backward(nodes, root)
    g = np.array(
        [leaf.adj if leaf.adj is not None else 0.0 for leaf in leaves]
    )
    return float(root.value), g


def grad(scalar_fn, at):
    """Gradient ∂f/∂θ_i of a traced scalar function; length equals dim(at)."""
    return value_and_grad(scalar_fn, at)[1]


def input_derivative(net_fn, x, axis, order):
    """First or second derivative of a scalar network output along one axis.

    ``net_fn`` receives the list of input coordinates (generic scalars) and
    returns the output.  Exact to machine precision for the composed graph.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order!r}")
    x = [float(v) for v in np.atleast_1d(np.asarray(x, dtype=float))]
    if order == 1:
        seeded = [
            DualValue(v, 1.0 if i == axis else 0.0) for i, v in enumerate(x)
        ]
        out = net_fn(seeded)
        return float(DualValue._wrap(out).tangent)
    seeded = []
    for i, v in enumerate(x):
        s = 1.0 if i == axis else 0.0
        seeded.append(
            DualValue(DualValue(v, s), DualValue(s, 0.0))
        )
    out = DualValue._wrap(net_fn(seeded))
    return float(DualValue._wrap(out.tangent).tangent)


def mixed_input_gradient(net_fn, x):
    """Vector of first derivatives of the output along every input axis."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.array(
        [input_derivative(net_fn, x, axis, 1) for axis in range(x.size)]
    )


def hessian(scalar_fn, at, max_dim=HESSIAN_DIM_GUARD):
    """Dense symmetric Hessian of a traced scalar function (diagnostics).

    Forward-over-reverse: the traced graph is evaluated once per direction
    with dual-number parameter values, and the reverse pass propagates dual
    adjoints.  The assembled matrix is symmetrized as (H + Hᵀ)/2.
    """
    at = np.asarray(at, dtype=float)
    n = at.size
    if n > max_dim:
        raise ValueError(
            f"hessian dimension {n} exceeds guard {max_dim}; "
            "restrict to a subspace for diagnostics"
        )
    root, nodes, leaves = _trace(scalar_fn, n)
    H = np.empty((n, n))
    for i in range(n):
        duals = [DualValue(v, 1.0 if j == i else 0.0) for j, v in enumerate(at)]
        _forward(nodes, duals)
        _backward(nodes, root)
        for j, leaf in enumerate(leaves):
            a = leaf.adj
            if a is None:
                H[i, j] = 0.0
            elif isinstance(a, DualValue):
                H[i, j] = a.tangent
            else:
                H[i, j] = 0.0
    return 0.5 * (H + H.T)
