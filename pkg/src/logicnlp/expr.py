"""Smooth scalar expression graphs with values and reverse-mode gradients.

Two evaluation routes are provided.  :func:`evaluate` and :func:`gradient`
walk the graph directly and serve as the reference.  :class:`CompiledBatch`
generates straight-line Python for a whole list of expressions at once and
is what the solver calls in its inner loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Expr",
    "DomainError",
    "const",
    "var",
    "sin",
    "cos",
    "exp",
    "sqrt",
    "as_expr",
    "evaluate",
    "gradient",
    "derivatives",
    "variables",
    "max_var_index",
    "topological_order",
    "to_tree",
    "from_tree",
    "CompiledBatch",
    "SMOOTH_OPS",
]

SMOOTH_OPS = frozenset(
    {"const", "var", "add", "sub", "mul", "div", "neg", "pow", "sin", "cos", "exp", "sqrt"}
)
_BINARY = {"add", "sub", "mul", "div"}
_UNARY = {"neg", "pow", "sin", "cos", "exp", "sqrt"}


class DomainError(ValueError):
    """Expression evaluated outside the domain of one of its primitives."""


@dataclass(frozen=True, eq=False, slots=True)
class Expr:
    """Immutable node of an expression DAG.

    ``value`` holds the literal for ``const``, the variable index for ``var``
    and the exponent for ``pow``; it is unused otherwise.
    """

    op: str
    args: tuple["Expr", ...] = ()
    value: float = 0.0

    def __post_init__(self) -> None:
        if self.op not in SMOOTH_OPS:
            raise ValueError(f"operation {self.op!r} is not a smooth primitive")
        arity = 2 if self.op in _BINARY else 1 if self.op in _UNARY else 0
        if len(self.args) != arity:
            raise ValueError(f"{self.op} expects {arity} operands, got {len(self.args)}")
        if self.op == "var" and (int(self.value) != self.value or self.value < 0):
            raise ValueError(f"variable index must be a nonnegative integer, got {self.value}")

    def __add__(self, other):
        return Expr("add", (self, as_expr(other)))

    def __radd__(self, other):
        return Expr("add", (as_expr(other), self))

    def __sub__(self, other):
        return Expr("sub", (self, as_expr(other)))

    def __rsub__(self, other):
        return Expr("sub", (as_expr(other), self))

    def __mul__(self, other):
        return Expr("mul", (self, as_expr(other)))

    def __rmul__(self, other):
        return Expr("mul", (as_expr(other), self))

    def __truediv__(self, other):
        return Expr("div", (self, as_expr(other)))

    def __rtruediv__(self, other):
        return Expr("div", (as_expr(other), self))

    def __neg__(self):
        return Expr("neg", (self,))

    def __pos__(self):
        return self

    def __pow__(self, exponent):
        if isinstance(exponent, Expr):
            raise TypeError("exponent must be a constant number")
        return Expr("pow", (self,), float(exponent))

    def __repr__(self) -> str:
        if self.op == "const":
            return repr(self.value)
        if self.op == "var":
            return f"x[{int(self.value)}]"
        if self.op == "pow":
            return f"({self.args[0]!r})**{self.value!r}"
        if self.op == "neg":
            return f"-({self.args[0]!r})"
        if self.op in _BINARY:
            sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[self.op]
            return f"({self.args[0]!r} {sym} {self.args[1]!r})"
        return f"{self.op}({self.args[0]!r})"


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return const(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


def const(c: float) -> Expr:
    return Expr("const", (), float(c))


def var(index: int) -> Expr:
    return Expr("var", (), int(index))


def sin(e) -> Expr:
    return Expr("sin", (as_expr(e),))


def cos(e) -> Expr:
    return Expr("cos", (as_expr(e),))


def exp(e) -> Expr:
    return Expr("exp", (as_expr(e),))


def sqrt(e) -> Expr:
    return Expr("sqrt", (as_expr(e),))


def topological_order(roots: Iterable[Expr]) -> list[Expr]:
    """Children-first ordering of every node reachable from ``roots``."""
    order: list[Expr] = []
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in reversed(node.args):
                if id(child) not in seen:
                    stack.append((child, False))
    return order


def variables(e: Expr) -> set[int]:
    return {int(n.value) for n in topological_order([e]) if n.op == "var"}


def max_var_index(exprs: Iterable[Expr]) -> int:
    """Largest variable index referenced, or -1 when there is none."""
    return max(
        (int(n.value) for n in topological_order(exprs) if n.op == "var"), default=-1
    )


def _apply(op: str, a: float, b: float, c: float) -> float:
    # a, b: operand values; c: node constant (exponent for pow)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    if op == "neg":
        return -a
    if op == "pow":
        if a == 0.0 and c < 0:
            raise DomainError("zero raised to a negative power")
        if a < 0.0 and c != int(c):
            raise DomainError(f"negative base {a} with fractional exponent {c}")
        return a**c if c != int(c) else a ** int(c)
    if op == "sin":
        return math.sin(a)
    if op == "cos":
        return math.cos(a)
    if op == "exp":
        try:
            return math.exp(a)
        except OverflowError as err:
            raise DomainError(f"exp overflow at {a}") from err
    if op == "sqrt":
        if a < 0.0:
            raise DomainError(f"sqrt of negative argument {a}")
        return math.sqrt(a)
    raise ValueError(op)


def _forward(order: Sequence[Expr], point: Sequence[float], values: dict[int, float]) -> None:
    n = len(point)
    for node in order:
        if node.op == "const":
            values[id(node)] = node.value
        elif node.op == "var":
            i = int(node.value)
            if i >= n:
                raise IndexError(f"variable index {i} out of range for point of length {n}")
            values[id(node)] = float(point[i])
        else:
            a = values[id(node.args[0])]
            b = values[id(node.args[1])] if len(node.args) == 2 else 0.0
            values[id(node)] = _apply(node.op, a, b, node.value)


def evaluate(e: Expr, point: Sequence[float], workspace: dict | None = None) -> float:
    """Value of ``e`` at ``point``.

    ``workspace`` is an optional caller-owned scratch dict; it is cleared
    before use so concurrent callers just pass their own.
    """
    values = {} if workspace is None else workspace
    values.clear()
    _forward(topological_order([e]), point, values)
    return values[id(e)]


def gradient(e: Expr, point: Sequence[float], workspace: dict | None = None) -> np.ndarray:
    """Exact derivative of ``e`` with respect to every entry of ``point``."""
    order = topological_order([e])
    values = {} if workspace is None else workspace
    values.clear()
    _forward(order, point, values)
    adj = {id(e): 1.0}
    grad = np.zeros(len(point))
    for node in reversed(order):
        g = adj.get(id(node))
        if g is None or node.op == "const":
            continue
        op = node.op
        if op == "var":
            grad[int(node.value)] += g
            continue
        a = values[id(node.args[0])]
        if op == "add":
            partials = (1.0, 1.0)
        elif op == "sub":
            partials = (1.0, -1.0)
        elif op == "mul":
            partials = (values[id(node.args[1])], a)
        elif op == "div":
            b = values[id(node.args[1])]
            partials = (1.0 / b, -a / (b * b))
        elif op == "neg":
            partials = (-1.0,)
        elif op == "pow":
            c = node.value
            if a == 0.0 and c < 1.0:
                raise DomainError("unbounded derivative of power at zero")
            partials = (c * _apply("pow", a, 0.0, c - 1.0),)
        elif op == "sin":
            partials = (math.cos(a),)
        elif op == "cos":
            partials = (-math.sin(a),)
        elif op == "exp":
            partials = (values[id(node)],)
        elif op == "sqrt":
            if a <= 0.0:
                raise DomainError("sqrt is not differentiable at zero")
            partials = (0.5 / values[id(node)],)
        else:  # pragma: no cover - guarded by Expr.__post_init__
            raise ValueError(op)
        for child, d in zip(node.args, partials):
            if child.op != "const":
                adj[id(child)] = adj.get(id(child), 0.0) + g * d
    return grad


# -- serialization ---------------------------------------------------------



def _is_const(e: Expr, c: float) -> bool:
    return e.op == "const" and e.value == c


def _sadd(a: Expr | None, b: Expr) -> Expr:
    if a is None or _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Expr("add", (a, b))


def _smul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if a.op == "const" and b.op == "const":
        return const(a.value * b.value)
    return Expr("mul", (a, b))


def derivatives(e: Expr) -> dict[int, Expr]:
    """Symbolic partial derivatives of ``e``, keyed by variable index.

    Built by reverse accumulation over the graph, so the results share
    subexpressions with ``e``.  Variables with identically zero derivative
    are omitted.
    """
    order = topological_order([e])
    adj: dict[int, Expr] = {id(e): const(1.0)}
    out: dict[int, Expr] = {}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None or node.op == "const" or _is_const(g, 0.0):
            continue
        op = node.op
        if op == "var":
            k = int(node.value)
            out[k] = _sadd(out.get(k), g)
            continue
        a = node.args[0]
        if op == "add":
            parts = (g, g)
        elif op == "sub":
            parts = (g, _smul(const(-1.0), g))
        elif op == "mul":
            parts = (_smul(g, node.args[1]), _smul(g, a))
        elif op == "div":
            b = node.args[1]
            parts = (g / b, -(g * node) / b)
        elif op == "neg":
            parts = (_smul(const(-1.0), g),)
        elif op == "pow":
            c = node.value
            base = const(1.0) if c == 1.0 else a if c == 2.0 else Expr("pow", (a,), c - 1.0)
            parts = (_smul(g, _smul(const(c), base)),)
        elif op == "sin":
            parts = (_smul(g, cos(a)),)
        elif op == "cos":
            parts = (_smul(g, -sin(a)),)
        elif op == "exp":
            parts = (_smul(g, node),)
        elif op == "sqrt":
            parts = (_smul(g, 0.5 / node),)
        else:  # pragma: no cover - guarded by Expr.__post_init__
            raise ValueError(op)
        for child, d in zip(node.args, parts):
            if child.op != "const":
                adj[id(child)] = _sadd(adj.get(id(child)), d)
    return {k: v for k, v in sorted(out.items()) if not _is_const(v, 0.0)}


def to_tree(e: Expr, names: Sequence[str] | None = None):
    """Operator-tagged nested list, e.g. ``["add", ["var", "x"], ["const", 2.0]]``."""
    memo: dict[int, object] = {}
    for node in topological_order([e]):
        if node.op == "const":
            out = ["const", node.value]
        elif node.op == "var":
            i = int(node.value)
            out = ["var", names[i] if names is not None else i]
        elif node.op == "pow":
            out = ["pow", memo[id(node.args[0])], node.value]
        else:
            out = [node.op, *(memo[id(a)] for a in node.args)]
        memo[id(node)] = out
    return memo[id(e)]


def from_tree(tree, index_of=None, refs=None) -> Expr:
    """Inverse of :func:`to_tree`.

    ``index_of`` maps variable names to indices (integers pass through).
    ``refs`` resolves ``["ref", name]`` nodes to already-built expressions.
    """
    if isinstance(tree, (int, float)) and not isinstance(tree, bool):
        return const(tree)
    if not isinstance(tree, (list, tuple)) or not tree or not isinstance(tree[0], str):
        raise ValueError(f"malformed expression node: {tree!r}")
    op, rest = tree[0], tree[1:]
    if op == "const":
        return const(float(rest[0]))
    if op == "var":
        key = rest[0]
        if isinstance(key, int):
            return var(key)
        if index_of is None or key not in index_of:
            raise KeyError(f"unknown variable {key!r}")
        return var(index_of[key])
    if op == "ref":
        if refs is None or rest[0] not in refs:
            raise KeyError(f"unknown expression reference {rest[0]!r}")
        return refs[rest[0]]
    if op == "pow":
        return Expr("pow", (from_tree(rest[0], index_of, refs),), float(rest[1]))
    if op in ("sum", "prod"):
        parts = [from_tree(r, index_of, refs) for r in rest]
        if not parts:
            return const(0.0 if op == "sum" else 1.0)
        out = parts[0]
        for p in parts[1:]:
            out = out + p if op == "sum" else out * p
        return out
    if op not in SMOOTH_OPS:
        raise ValueError(f"unknown operator {op!r}")
    return Expr(op, tuple(from_tree(r, index_of, refs) for r in rest))


# -- compiled evaluation ---------------------------------------------------

_FWD = {
    "add": "{0} + {1}",
    "sub": "{0} - {1}",
    "mul": "{0} * {1}",
    "div": "{0} / {1}",
    "neg": "-{0}",
    "sin": "_sin({0})",
    "cos": "_cos({0})",
    "exp": "_exp({0})",
    "sqrt": "_sqrt({0})",
}


class CompiledBatch:
    """Values and sparse Jacobian of a list of expressions, generated as code.

    ``jacobian(x)`` returns the nonzero values in the order of ``rows`` and
    ``cols``; each (row, col) pair occurs once.  Arithmetic faults surface as
    :class:`DomainError` (or ``OverflowError`` from ``exp``).
    """

    def __init__(self, exprs: Sequence[Expr], n_vars: int):
        self.exprs = tuple(exprs)
        self.n_vars = n_vars
        self.m = len(self.exprs)
        top = max_var_index(self.exprs)
        if top >= n_vars:
            raise ValueError(f"expression references variable {top} but only {n_vars} declared")
        self._build()

    def _build(self) -> None:
        order = topological_order(self.exprs)
        name: dict[int, str] = {}
        fwd: list[str] = []
        for k, node in enumerate(order):
            if node.op == "const":
                name[id(node)] = f"({node.value!r})"
                continue
            if node.op == "var":
                name[id(node)] = f"x[{int(node.value)}]"
                continue
            t = f"t{k}"
            name[id(node)] = t
            ops = [name[id(a)] for a in node.args]
            if node.op == "pow":
                c = node.value
                if c == 2.0:
                    rhs = f"{ops[0]} * {ops[0]}"
                elif c == int(c):
                    rhs = f"{ops[0]} ** {int(c)}"
                else:
                    rhs = f"_fpow({ops[0]}, {c!r})"
            else:
                rhs = _FWD[node.op].format(*ops)
            fwd.append(f"    {t} = {rhs}")

        pos = {id(node): k for k, node in enumerate(order)}
        rev: list[str] = []
        rows: list[int] = []
        cols: list[int] = []
        for r, root in enumerate(self.exprs):
            sub = sorted(topological_order([root]), key=lambda nd: pos[id(nd)])
            terms: dict[int, list[str]] = {id(root): ["1.0"]}
            var_terms: dict[int, list[str]] = {}
            for node in reversed(sub):
                if node.op in ("const", "var"):
                    continue
                parts = terms.pop(id(node), None)
                if not parts:
                    continue
                g = f"g{r}_{pos[id(node)]}"
                rev.append(f"    {g} = {' + '.join(parts)}")
                me = name[id(node)]
                a = name[id(node.args[0])]
                b = name[id(node.args[1])] if len(node.args) == 2 else ""
                op = node.op
                if op == "add":
                    local = [g, g]
                elif op == "sub":
                    local = [g, f"-{g}"]
                elif op == "mul":
                    local = [f"{g} * {b}", f"{g} * {a}"]
                elif op == "div":
                    local = [f"{g} / {b}", f"-{g} * {me} / {b}"]
                elif op == "neg":
                    local = [f"-{g}"]
                elif op == "pow":
                    c = node.value
                    if c == 2.0:
                        local = [f"2.0 * {g} * {a}"]
                    elif c == 1.0:
                        local = [g]
                    elif c == int(c) and c > 1:
                        local = [f"{g} * {c!r} * {a} ** {int(c) - 1}"]
                    else:
                        local = [f"{g} * {c!r} * _dpow({a}, {c - 1.0!r})"]
                elif op == "sin":
                    local = [f"{g} * _cos({a})"]
                elif op == "cos":
                    local = [f"-{g} * _sin({a})"]
                elif op == "exp":
                    local = [f"{g} * {me}"]
                elif op == "sqrt":
                    local = [f"{g} * 0.5 / {me}"]
                else:  # pragma: no cover
                    raise ValueError(op)
                for child, d in zip(node.args, local):
                    if child.op == "const":
                        continue
                    if child.op == "var":
                        var_terms.setdefault(int(child.value), []).append(d)
                    else:
                        terms.setdefault(id(child), []).append(d)
            if root.op == "var":
                var_terms.setdefault(int(root.value), []).append("1.0")
            for col in sorted(var_terms):
                rev.append(f"    J.append({' + '.join(var_terms[col])})")
                rows.append(r)
                cols.append(col)

        out = ", ".join(name[id(e)] for e in self.exprs)
        src = ["def _values(x):"] + fwd + [f"    return [{out}]"]
        src += ["", "def _jacobian(x):"] + fwd + ["    J = []"] + rev + ["    return J"]
        namespace = {
            "_sin": math.sin,
            "_cos": math.cos,
            "_exp": math.exp,
            "_sqrt": math.sqrt,
            "_fpow": math.pow,
            "_dpow": _dpow,
        }
        exec(compile("\n".join(src) + "\n", "<logicnlp-compiled>", "exec"), namespace)
        self._values = namespace["_values"]
        self._jacobian = namespace["_jacobian"]
        self.rows = np.asarray(rows, dtype=np.intp)
        self.cols = np.asarray(cols, dtype=np.intp)
        self.nnz = len(rows)

    def values(self, x: np.ndarray) -> np.ndarray:
        try:
            return np.array(self._values(x.tolist()), dtype=float)
        except (ValueError, ZeroDivisionError) as err:
            raise DomainError(str(err)) from err

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        try:
            return np.array(self._jacobian(x.tolist()), dtype=float)
        except (ValueError, ZeroDivisionError) as err:
            raise DomainError(str(err)) from err

    def dense_jacobian(self, x: np.ndarray) -> np.ndarray:
        J = np.zeros((self.m, self.n_vars))
        J[self.rows, self.cols] = self.jacobian(x)
        return J


def _dpow(a: float, c: float) -> float:
    if a == 0.0 and c < 0:
        raise DomainError("unbounded derivative of power at zero")
    return math.pow(a, c)
