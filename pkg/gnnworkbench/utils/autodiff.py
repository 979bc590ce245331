#!/usr/bin/python

"""Reverse-mode differentiation over dense numpy matrix programs.

A ValueGraph records every primitive applied to its Vars, in order, together
with the forward value. `gradient()` walks the record backwards. Each
primitive's vector-Jacobian product is itself written with engine operations,
so with `create_graph=True` the backward pass is recorded onto the same graph
and can be differentiated once more (the meta-gradient through unrolled
training relies on this).
"""

import logging
import numpy as np

from gnnworkbench.utils.common import GradientError, NumericError

logger = logging.getLogger("gnnworkbench")

LEAF = "leaf"
CONST = "const"


class _Node:
    __slots__ = ("prim", "inputs", "attrs", "name")

    def __init__(self, prim: str, inputs: tuple = (), attrs: dict = None, name=None):
        self.prim = prim
        self.inputs = inputs
        self.attrs = attrs or {}
        self.name = name


class Var:
    """Handle to a recorded value"""

    __slots__ = ("graph", "index")

    __array_priority__ = 100

    def __init__(self, graph: "ValueGraph", index: int):
        self.graph = graph
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.graph.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self) -> "Var":
        return transpose(self)

    def item(self) -> float:
        return float(self.value)

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.graph is not self.graph:
                raise GradientError("Operands belong to different ValueGraphs")
            return other
        return self.graph.constant(other)

    def __add__(self, other):
        return self.graph.apply("add", (self, self._lift(other)))

    def __radd__(self, other):
        return self.graph.apply("add", (self._lift(other), self))

    def __sub__(self, other):
        return self.graph.apply("sub", (self, self._lift(other)))

    def __rsub__(self, other):
        return self.graph.apply("sub", (self._lift(other), self))

    def __mul__(self, other):
        return self.graph.apply("mul", (self, self._lift(other)))

    def __rmul__(self, other):
        return self.graph.apply("mul", (self._lift(other), self))

    def __truediv__(self, other):
        return self.graph.apply("div", (self, self._lift(other)))

    def __rtruediv__(self, other):
        return self.graph.apply("div", (self._lift(other), self))

    def __neg__(self):
        return self.graph.apply("neg", (self,))

    def __matmul__(self, other):
        return self.graph.apply("matmul", (self, self._lift(other)))

    def __rmatmul__(self, other):
        return self.graph.apply("matmul", (self._lift(other), self))

    def __getitem__(self, index):
        return gather(self, index)

    def sum(self, axis=None, keepdims=False) -> "Var":
        return vsum(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"


class ValueGraph:
    """Ordered record of primitive operations over numpy values.

    Args:
        check_finite (bool): raise NumericError as soon as a primitive produces
            NaN or Inf instead of letting it propagate.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []
        self.leaves: dict[str, int] = {}
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def _append(self, node: _Node, value: np.ndarray) -> Var:
        self.nodes.append(node)
        self.values.append(value)
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value, name: str = None) -> Var:
        """Differentiable input that can be rebound by evaluate()"""
        name = name if name is not None else f"leaf{len(self.leaves)}"
        if name in self.leaves:
            raise GradientError(f"Leaf '{name}' is already bound")
        var = self._append(
            _Node(LEAF, name=name), np.array(value, dtype=np.float64, copy=True)
        )
        self.leaves[name] = var.index
        return var

    def constant(self, value) -> Var:
        return self._append(_Node(CONST), np.asarray(value, dtype=np.float64))

    def apply(self, prim: str, inputs: tuple, **attrs) -> Var:
        values = [self.values[v.index] for v in inputs]
        out = PRIMITIVES[prim][0](*values, **attrs)
        self._check(prim, out)
        return self._append(_Node(prim, tuple(v.index for v in inputs), attrs), out)

    def _check(self, prim: str, out: np.ndarray):
        if self.check_finite and not np.all(np.isfinite(out)):
            raise NumericError(f"Primitive '{prim}' produced non-finite values")

    def evaluate(self, bindings: dict = None, outputs: list = None) -> list:
        """Replay the recorded program with new leaf values.

        Args:
            bindings (dict): leaf name -> value. Unbound leaves keep their
                recorded value.
            outputs (list): Vars whose replayed values are returned. Defaults
                to the last recorded node.

        Returns:
            list: replayed values, one per requested output
        """
        bindings = bindings or {}
        unknown = set(bindings) - set(self.leaves)
        if unknown:
            raise GradientError(f"Unknown leaves: {sorted(unknown)}")

        values: list = []
        for i, node in enumerate(self.nodes):
            if node.prim == LEAF:
                v = bindings.get(node.name, self.values[i])
                v = np.asarray(v, dtype=np.float64)
                if v.shape != self.values[i].shape:
                    raise GradientError(
                        f"Shape mismatch for leaf '{node.name}': {v.shape} != {self.values[i].shape}"
                    )
                values.append(v)
            elif node.prim == CONST:
                values.append(self.values[i])
            else:
                out = PRIMITIVES[node.prim][0](
                    *[values[j] for j in node.inputs], **node.attrs
                )
                self._check(node.prim, out)
                values.append(out)

        if outputs is None:
            return [values[-1]]
        return [values[v.index] for v in outputs]

    def gradient(self, output: Var, wrt, create_graph: bool = False):
        """Reverse-mode adjoint of a scalar output.

        Args:
            output (Var): scalar output
            wrt (Var | list[Var]): any recorded Vars (leaves or intermediates)
            create_graph (bool): record the backward pass onto this graph and
                return Vars instead of arrays

        Returns:
            the gradient(s), shaped like wrt. Vars that do not influence the
            output get zeros.
        """
        single = isinstance(wrt, Var)
        targets = [wrt] if single else list(wrt)

        if output.value.size != 1:
            raise GradientError(
                f"gradient() requires a scalar output, got shape {output.shape}"
            )

        last = output.index
        wanted = {t.index for t in targets}

        # nodes through which a wanted Var can influence the output
        depends = np.zeros(last + 1, dtype=bool)
        for i in range(last + 1):
            if i in wanted:
                depends[i] = True
            elif self.nodes[i].inputs:
                depends[i] = any(
                    j <= last and depends[j] for j in self.nodes[i].inputs
                )

        # create_graph: adjoints are Vars on this graph. Otherwise they are
        # plain arrays and every VJP runs on a throwaway graph, so nothing
        # outlives the sweep except the running adjoints.
        adjoints: dict = {}
        ones = np.ones_like(output.value)
        adjoints[last] = self.constant(ones) if create_graph else ones

        for i in range(last, -1, -1):
            g = adjoints.get(i)
            if g is None or not depends[i]:
                continue
            node = self.nodes[i]
            if node.prim in (LEAF, CONST):
                continue
            needs = tuple(bool(depends[j]) for j in node.inputs)
            if not any(needs):
                continue

            if create_graph:
                out, inputs = Var(self, i), tuple(Var(self, j) for j in node.inputs)
            else:
                if i not in wanted:
                    del adjoints[i]
                bw = ValueGraph(check_finite=self.check_finite)
                g = bw.constant(g)
                out = bw.constant(self.values[i])
                inputs = tuple(bw.constant(self.values[j]) for j in node.inputs)

            grads = PRIMITIVES[node.prim][1](g, out, inputs, needs, **node.attrs)
            for j, gj, need in zip(node.inputs, grads, needs):
                if gj is None or not need:
                    continue
                if not create_graph:
                    gj = gj.value
                adjoints[j] = adjoints[j] + gj if j in adjoints else gj

        results = []
        for t in targets:
            g = adjoints.get(t.index)
            if g is None:
                zeros = np.zeros_like(t.value)
                g = self.constant(zeros) if create_graph else zeros
            results.append(g if create_graph else np.array(g))

        return results[0] if single else results


# --------------------------------------------------------------------------
# functional API


def _lift_pair(a, b):
    if isinstance(a, Var):
        return a, a._lift(b)
    return b._lift(a), b


def add(a, b):
    a, b = _lift_pair(a, b)
    return a.graph.apply("add", (a, b))


def mul(a, b):
    a, b = _lift_pair(a, b)
    return a.graph.apply("mul", (a, b))


def matmul(a, b):
    a, b = _lift_pair(a, b)
    return a.graph.apply("matmul", (a, b))


def transpose(a: Var) -> Var:
    return a.graph.apply("transpose", (a,))


def exp(a: Var) -> Var:
    return a.graph.apply("exp", (a,))


def log(a: Var) -> Var:
    return a.graph.apply("log", (a,))


def tanh(a: Var) -> Var:
    return a.graph.apply("tanh", (a,))


def sqrt(a: Var) -> Var:
    return a.graph.apply("sqrt", (a,))


def power(a: Var, p: float) -> Var:
    return a.graph.apply("power", (a,), p=float(p))


def sigmoid(a: Var) -> Var:
    return a.graph.apply("sigmoid", (a,))


def relu(a: Var) -> Var:
    return a.graph.apply("relu", (a,))


def elu(a: Var) -> Var:
    return a.graph.apply("elu", (a,))


def clamp(a: Var, lo: float = -np.inf, hi: float = np.inf) -> Var:
    return a.graph.apply("clamp", (a,), lo=float(lo), hi=float(hi))


def row_softmax(a: Var) -> Var:
    return a.graph.apply("row_softmax", (a,))


def log_softmax(a: Var) -> Var:
    return a.graph.apply("log_softmax", (a,))


def vsum(a: Var, axis=None, keepdims: bool = False) -> Var:
    return a.graph.apply("sum", (a,), axis=axis, keepdims=keepdims)


def reshape(a: Var, shape) -> Var:
    return a.graph.apply("reshape", (a,), shape=tuple(shape))


def broadcast_to(a: Var, shape) -> Var:
    return a.graph.apply("broadcast_to", (a,), shape=tuple(shape))


def sum_to(a: Var, shape) -> Var:
    return a.graph.apply("sum_to", (a,), shape=tuple(shape))


def row_max(a: Var) -> Var:
    return a.graph.apply("row_max", (a,))


def gather(a: Var, index) -> Var:
    return a.graph.apply("gather", (a,), index=index)


def scatter(a: Var, index, shape) -> Var:
    return a.graph.apply("scatter", (a,), index=index, shape=tuple(shape))


def stop_gradient(a: Var) -> Var:
    return a.graph.apply("stop_gradient", (a,))


def pairs_to_dense(p: Var, rows: np.ndarray, cols: np.ndarray, n: int) -> Var:
    return p.graph.apply("pairs_to_dense", (p,), rows=rows, cols=cols, n=int(n))


def dense_to_pairs(a: Var, rows: np.ndarray, cols: np.ndarray) -> Var:
    return a.graph.apply("dense_to_pairs", (a,), rows=rows, cols=cols)


def solve(a, b) -> Var:
    a, b = _lift_pair(a, b)
    return a.graph.apply("solve", (a, b))


def weighted_median(weights, h: Var) -> Var:
    """Dimension-wise weighted median of the rows of h, one per weight row.

    The selection is piecewise constant in the weights, so gradient only
    flows to the selected entries of h.
    """
    weights = np.asarray(weights.value if isinstance(weights, Var) else weights)
    index = (_median_rows(weights, h.value), np.arange(h.shape[1])[None, :])
    return gather(h, index)


def _median_rows(weights: np.ndarray, h: np.ndarray) -> np.ndarray:
    half = 0.5 * weights.sum(axis=1, keepdims=True) * (1 - 1e-12)
    rows = np.empty((weights.shape[0], h.shape[1]), dtype=np.int64)
    for d in range(h.shape[1]):
        order = np.argsort(h[:, d], kind="stable")
        cs = np.cumsum(weights[:, order], axis=1)
        rows[:, d] = order[np.argmax(cs >= half, axis=1)]
    return rows


# --------------------------------------------------------------------------
# primitives: name -> (forward, vjp)
# vjp(g, out, inputs, needs, **attrs) returns one gradient (or None) per input


def _unbroadcast(g: Var, shape) -> Var:
    if g.shape == tuple(shape):
        return g
    return sum_to(g, shape)


def _np_sum_to(x: np.ndarray, shape) -> np.ndarray:
    shape = tuple(shape)
    while x.ndim > len(shape):
        x = x.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x.reshape(shape)


def _vjp_add(g, out, inputs, needs):
    a, b = inputs
    return (
        _unbroadcast(g, a.shape) if needs[0] else None,
        _unbroadcast(g, b.shape) if needs[1] else None,
    )


def _vjp_sub(g, out, inputs, needs):
    a, b = inputs
    return (
        _unbroadcast(g, a.shape) if needs[0] else None,
        _unbroadcast(-g, b.shape) if needs[1] else None,
    )


def _vjp_mul(g, out, inputs, needs):
    a, b = inputs
    return (
        _unbroadcast(g * b, a.shape) if needs[0] else None,
        _unbroadcast(g * a, b.shape) if needs[1] else None,
    )


def _vjp_div(g, out, inputs, needs):
    a, b = inputs
    return (
        _unbroadcast(g / b, a.shape) if needs[0] else None,
        _unbroadcast(-(g * out) / b, b.shape) if needs[1] else None,
    )


def _vjp_matmul(g, out, inputs, needs):
    a, b = inputs
    return (
        matmul(g, transpose(b)) if needs[0] else None,
        matmul(transpose(a), g) if needs[1] else None,
    )


def _vjp_sum(g, out, inputs, needs, axis, keepdims):
    (a,) = inputs
    if axis is not None and not keepdims:
        shape = list(a.shape)
        for ax in np.atleast_1d(axis):
            shape[ax] = 1
        g = reshape(g, shape)
    return (broadcast_to(g, a.shape),)


def _mask_const(g: Var, mask: np.ndarray) -> Var:
    return g * g.graph.constant(mask.astype(np.float64))


def _vjp_row_max(g, out, inputs, needs):
    (a,) = inputs
    onehot = np.zeros_like(a.value)
    onehot[np.arange(a.shape[0]), np.argmax(a.value, axis=1)] = 1.0
    return (_mask_const(broadcast_to(reshape(g, (a.shape[0], 1)), a.shape), onehot),)


def _fwd_scatter(x, index, shape):
    out = np.zeros(shape)
    np.add.at(out, index, x)
    return out


def _fwd_pairs_to_dense(p, rows, cols, n):
    out = np.zeros((n, n))
    out[rows, cols] = p
    out[cols, rows] = p
    return out


def _fwd_solve(a, b):
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"Singular linear system: {e}")


def _vjp_solve(g, out, inputs, needs):
    a, b = inputs
    gb = solve(transpose(a), g)
    return (
        -matmul(gb, transpose(out)) if needs[0] else None,
        gb if needs[1] else None,
    )


def _fwd_row_softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _fwd_log_softmax(x):
    s = x - x.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _fwd_elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def _vjp_elu(g, out, inputs, needs):
    (a,) = inputs
    m = a.graph.constant((a.value > 0).astype(np.float64))
    return (g * (m + (1.0 - m) * (out + 1.0)),)


PRIMITIVES = {
    "add": (np.add, _vjp_add),
    "sub": (np.subtract, _vjp_sub),
    "mul": (np.multiply, _vjp_mul),
    "div": (np.divide, _vjp_div),
    "neg": (np.negative, lambda g, out, inputs, needs: (-g,)),
    "matmul": (np.matmul, _vjp_matmul),
    "transpose": (np.transpose, lambda g, out, inputs, needs: (transpose(g),)),
    "exp": (np.exp, lambda g, out, inputs, needs: (g * out,)),
    "log": (np.log, lambda g, out, inputs, needs: (g / inputs[0],)),
    "tanh": (np.tanh, lambda g, out, inputs, needs: (g * (1.0 - out * out),)),
    "sqrt": (np.sqrt, lambda g, out, inputs, needs: (g * 0.5 / out,)),
    "power": (
        lambda x, p: np.power(x, p),
        lambda g, out, inputs, needs, p: (g * p * power(inputs[0], p - 1),),
    ),
    "sigmoid": (
        lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)),
        lambda g, out, inputs, needs: (g * out * (1.0 - out),),
    ),
    # sub-gradient 0 at the kink
    "relu": (
        lambda x: np.maximum(x, 0.0),
        lambda g, out, inputs, needs: (_mask_const(g, inputs[0].value > 0),),
    ),
    "elu": (_fwd_elu, _vjp_elu),
    "clamp": (
        lambda x, lo, hi: np.clip(x, lo, hi),
        lambda g, out, inputs, needs, lo, hi: (
            _mask_const(g, (inputs[0].value > lo) & (inputs[0].value < hi)),
        ),
    ),
    "row_softmax": (
        _fwd_row_softmax,
        lambda g, out, inputs, needs: (
            out * (g - vsum(g * out, axis=1, keepdims=True)),
        ),
    ),
    "log_softmax": (
        _fwd_log_softmax,
        lambda g, out, inputs, needs: (
            g - exp(out) * vsum(g, axis=1, keepdims=True),
        ),
    ),
    "sum": (
        lambda x, axis, keepdims: np.asarray(np.sum(x, axis=axis, keepdims=keepdims)),
        _vjp_sum,
    ),
    "reshape": (
        lambda x, shape: np.reshape(x, shape),
        lambda g, out, inputs, needs, shape: (reshape(g, inputs[0].shape),),
    ),
    "broadcast_to": (
        lambda x, shape: np.broadcast_to(x, shape),
        lambda g, out, inputs, needs, shape: (sum_to(g, inputs[0].shape),),
    ),
    "sum_to": (
        _np_sum_to,
        lambda g, out, inputs, needs, shape: (broadcast_to(g, inputs[0].shape),),
    ),
    "row_max": (lambda x: np.max(x, axis=1), _vjp_row_max),
    "gather": (
        lambda x, index: np.array(x[index]),
        lambda g, out, inputs, needs, index: (scatter(g, index, inputs[0].shape),),
    ),
    "scatter": (
        _fwd_scatter,
        lambda g, out, inputs, needs, index, shape: (gather(g, index),),
    ),
    "stop_gradient": (
        lambda x: x,
        lambda g, out, inputs, needs: (None,),
    ),
    "pairs_to_dense": (
        _fwd_pairs_to_dense,
        lambda g, out, inputs, needs, rows, cols, n: (dense_to_pairs(g, rows, cols),),
    ),
    "dense_to_pairs": (
        lambda x, rows, cols: x[rows, cols] + x[cols, rows],
        lambda g, out, inputs, needs, rows, cols: (
            pairs_to_dense(g, rows, cols, inputs[0].shape[0]),
        ),
    ),
    "solve": (_fwd_solve, _vjp_solve),
}


def evaluate(graph: ValueGraph, bindings: dict = None, outputs: list = None) -> list:
    return graph.evaluate(bindings, outputs)


def gradient(graph: ValueGraph, output: Var, wrt, create_graph: bool = False):
    return graph.gradient(output, wrt, create_graph=create_graph)


def finite_difference_check(
    fn,
    point: np.ndarray,
    step: float = 1e-5,
    coords: int = None,
    rng: np.random.Generator = None,
) -> float:
    """Compare the recorded gradient of fn against central differences.

    Args:
        fn: callable(graph, x) -> scalar Var, x being a leaf holding the point
        point (np.ndarray): where to check
        step (float): finite-difference step
        coords (int): check only this many randomly chosen coordinates
        rng (np.random.Generator): picks the coordinates

    Returns:
        float: max over coordinates of |analytic - central| / max(1, |analytic|)
    """
    point = np.array(point, dtype=np.float64)

    def value_at(x: np.ndarray) -> float:
        vg = ValueGraph()
        return float(fn(vg, vg.leaf(x, "x")).value)

    vg = ValueGraph()
    x = vg.leaf(point, "x")
    out = fn(vg, x)
    analytic = vg.gradient(out, x)

    first, second = value_at(point), value_at(point)
    if first != second or first != float(out.value):
        raise GradientError(
            f"Function is not deterministic: {first!r} != {second!r}"
        )

    flat = np.arange(point.size)
    if coords is not None and coords < point.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        flat = rng.choice(point.size, size=coords, replace=False)

    worst = 0.0
    for k in flat:
        idx = np.unravel_index(k, point.shape)
        up, down = point.copy(), point.copy()
        up[idx] += step
        down[idx] -= step
        numeric = (value_at(up) - value_at(down)) / (2 * step)
        a = analytic[idx]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))

    logger.debug(f"finite_difference_check: {len(flat)} coordinates, max deviation {worst:.3e}")
    return worst
