"""
Minimal reverse-mode differentiation.

A Tape records operations eagerly: every recorded node stores its forward value
and refers to its inputs by node id, so ids are a topological order by
construction. Operations live in the OPS registry; modules that own a
specialized operation (band filtering, FDW materialization, the KSM 1-D
convolution) register it with the ``defop`` decorator.

Usage:
    >>> tape = Tape()
    >>> x = tape.parameter(3.0, "x")
    >>> y = tape.record("scale", tape.record("scale", x, factor=3.0), factor=2.0)
    >>> backprop(tape, y, 1.0).named()["x"]
    array(6.)
"""
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import numerics
from .numerics import shift2d
from .utils import as_rng, fmt_shape

OPS = {}
LEAVES = ("parameter", "constant")


class Op:
    """
    A recorded operation: forward function plus its vector-Jacobian product.

    The backward rule receives (grad, out, *inputs, **attrs) and returns one
    gradient (or None) per input.
    """

    def __init__(self, name, forward, linear=False):
        self.name = name
        self.forward = forward
        self.backward = None
        self.linear = linear

    def __repr__(self):
        return f"<Op {self.name}>"

    def defvjp(self, fn):
        self.backward = fn
        return fn


def defop(name, linear=False):
    """
    Register forward function as a recorded operation.
    """

    def decorator(fn):
        if name in OPS:
            raise ValueError(f"operation already registered: {name!r}")
        op = OPS[name] = Op(name, fn, linear)
        return op

    return decorator


class Node(NamedTuple):
    op: str
    inputs: tuple
    value: np.ndarray
    attrs: dict


class GradientMap(dict):
    """
    Gradients keyed by parameter node id.
    """

    def __init__(self, grads, names):
        super().__init__(grads)
        self.names = names

    def named(self):
        """
        Return gradients keyed by parameter name.
        """
        return {self.names[i]: g for i, g in self.items()}


class Tape:
    """
    Append-only record of a differentiable computation.
    """

    def __init__(self):
        self.nodes = []
        self.params = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, inputs, value, attrs):
        self.nodes.append(Node(op, tuple(inputs), value, attrs))
        return len(self.nodes) - 1

    def parameter(self, value, name=None):
        """
        Register a differentiable leaf and return its node id.
        """
        value = numerics.check_finite(np.array(value, dtype=float), "parameter")
        node = self._push("parameter", (), value, {})
        self.params[node] = name if name is not None else f"p{node}"
        return node

    def constant(self, value):
        """
        Register a non-differentiable leaf.
        """
        return self._push("constant", (), np.array(value, dtype=float), {})

    def record(self, op, *inputs, **attrs):
        """
        Evaluate op on the given nodes and record the result.
        """
        try:
            entry = OPS[op]
        except KeyError:
            raise ValueError(f"unknown operation: {op!r}")
        for i in inputs:
            if not isinstance(i, (int, np.integer)) or not 0 <= i < len(self.nodes):
                raise ValueError(f"{op}: invalid input node {i!r}")

        values = [self.nodes[i].value for i in inputs]
        try:
            value = entry.forward(*values, **attrs)
        except ValueError as ex:
            shapes = ", ".join(fmt_shape(v.shape) for v in values)
            raise ValueError(f"{op}: rejected inputs of shape ({shapes}): {ex}") from ex
        return self._push(op, inputs, np.asarray(value, dtype=float), attrs)

    def value(self, node):
        return self.nodes[node].value

    def replay(self):
        """
        Recompute every node from the recorded leaves and return the values.
        """
        values = []
        for node in self.nodes:
            if node.op in LEAVES:
                values.append(node.value)
            else:
                args = [values[i] for i in node.inputs]
                value = OPS[node.op].forward(*args, **node.attrs)
                values.append(np.asarray(value, dtype=float))
        return values


def unbroadcast(grad, shape):
    """
    Sum grad over the axes that broadcasting added or stretched to reach shape.
    """
    grad = np.asarray(grad, dtype=float)
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backprop(tape, output, seed):
    """
    Reverse-mode gradients of ⟨seed, output⟩ for every registered parameter.
    """
    out_value = tape.value(output)
    seed = np.broadcast_to(np.asarray(seed, dtype=float), np.shape(seed))
    if seed.shape != out_value.shape:
        raise ValueError(
            f"seed shape {fmt_shape(seed.shape)} differs from output shape "
            f"{fmt_shape(out_value.shape)}"
        )

    pending = {output: np.array(seed)}
    result = {}
    for i in range(output, -1, -1):
        grad = pending.pop(i, None)
        if grad is None:
            continue
        node = tape.nodes[i]
        if i in tape.params:
            result[i] = grad
        if node.op in LEAVES:
            continue

        inputs = [tape.nodes[j].value for j in node.inputs]
        grads = OPS[node.op].backward(grad, node.value, *inputs, **node.attrs)
        for j, x, g in zip(node.inputs, inputs, grads):
            if g is None:
                continue
            g = unbroadcast(g, x.shape)
            pending[j] = pending[j] + g if j in pending else g

    for i, name in tape.params.items():
        if i not in result:
            result[i] = np.zeros_like(tape.value(i))
        elif not np.all(np.isfinite(result[i])):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
    return GradientMap(result, dict(tape.params))


#
# Verification
#
def evaluate(f, theta, gradient=False):
    """
    Build f on a fresh tape with theta as parameters.

    f(tape, nodes) receives a dict of parameter node ids and returns the node
    of a scalar output. Return the scalar (and its named gradients).
    """
    tape = Tape()
    nodes = {name: tape.parameter(value, name) for name, value in theta.items()}
    out = f(tape, nodes)
    value = tape.value(out)
    if value.shape != ():
        raise ValueError(f"expect a scalar output, got shape {fmt_shape(value.shape)}")
    if not gradient:
        return float(value)
    return float(value), backprop(tape, out, 1.0).named()


def finite_diff_check(f, theta, eps=1e-5, samples=None, seed=0):
    """
    Compare reverse-mode gradients with central differences.

    Args:
        f:
            Graph builder, see :func:`evaluate`.
        theta:
            Mapping from parameter name to value.
        eps:
            Finite difference step, within [1e-7, 1e-3].
        samples:
            If given, only check this many randomly chosen coordinates.

    Returns:
        max |analytic - central| / max(1, |analytic|, |central|).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-7, 1e-3], got {eps}")
    theta = {name: np.array(v, dtype=float) for name, v in theta.items()}
    _, grads = evaluate(f, theta, gradient=True)

    coords = [(name, i) for name, v in theta.items() for i in range(v.size)]
    if samples is not None and samples < len(coords):
        pick = np.sort(as_rng(seed).choice(len(coords), size=samples, replace=False))
        coords = [coords[i] for i in pick]

    worst = 0.0
    for name, i in coords:
        values = []
        for step in (eps, -eps):
            probe = dict(theta)
            probe[name] = theta[name].copy()
            probe[name].flat[i] += step
            value = evaluate(f, probe)
            if not np.isfinite(value):
                raise ValueError(f"non-finite value while perturbing {name}[{i}]")
            values.append(value)
        central = (values[0] - values[1]) / (2 * eps)
        analytic = grads[name].flat[i]
        error = abs(analytic - central) / max(1.0, abs(analytic), abs(central))
        worst = max(worst, error)
    return worst


class LinearOperator(NamedTuple):
    forward: Callable
    adjoint: Callable
    in_shape: tuple
    name: Optional[str] = None


def op_operator(name, in_shape, **attrs):
    """
    Wrap a registered linear operation and its backward rule as a LinearOperator.
    """
    op = OPS[name]
    if not op.linear:
        raise ValueError(f"operation {name!r} is not linear")
    zeros = np.zeros(in_shape)

    def forward(x):
        return op.forward(x, **attrs)

    def adjoint(y):
        (g,) = op.backward(y, None, zeros, **attrs)
        return unbroadcast(g, in_shape)

    return LinearOperator(forward, adjoint, tuple(in_shape), name)


def _inner(a, b):
    return float(np.real(np.vdot(a, b)))


def adjoint_dot_test(linop, trials=3, seed=0):
    """
    Return max |⟨A x, y⟩ - ⟨x, Aᵀ y⟩| / scale over random trials.

    The scale is max(1, ‖A x‖‖y‖, ‖x‖‖Aᵀ y‖). Complex outputs are paired with
    complex probes and compared under Re⟨a, b⟩.
    """
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    rng = as_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(linop.in_shape)
        ax = np.asarray(linop.forward(x))
        y = rng.standard_normal(ax.shape)
        if np.iscomplexobj(ax):
            y = y + 1j * rng.standard_normal(ax.shape)
        aty = np.asarray(linop.adjoint(y))
        lhs, rhs = _inner(ax, y), _inner(x, aty)
        scale = max(1.0, np.linalg.norm(ax) * np.linalg.norm(y))
        scale = max(scale, np.linalg.norm(x) * np.linalg.norm(aty))
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


#
# Operations
#
@defop("add", linear=True)
def _add(a, b):
    return a + b


@_add.defvjp
def _(g, out, a, b):
    return g, g


@defop("multiply")
def _multiply(a, b):
    return a * b


@_multiply.defvjp
def _(g, out, a, b):
    return g * b, g * a


@defop("matmul")
def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    return np.matmul(a, b)


@_matmul.defvjp
def _(g, out, a, b):
    return np.matmul(g, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), g)


@defop("conv2d")
def _conv2d(x, w, mode="circular"):
    return numerics.conv2d_direct(x, w, mode)


@_conv2d.defvjp
def _(g, out, x, w, mode="circular"):
    k = w.shape[-4]
    r = k // 2
    gx = 0.0
    gw = None
    for a in range(k):
        for b in range(k):
            xs = shift2d(x, a - r, b - r, mode)
            gw_ab = np.einsum("...ohw,...chw->...co", g, xs)
            if gw is None:
                gw = np.zeros(gw_ab.shape[:-2] + w.shape[-4:])
            gw[..., a, b, :, :] = gw_ab
            back = np.einsum("...co,...ohw->...chw", w[..., a, b, :, :], g)
            gx = gx + shift2d(back, r - a, r - b, mode)
    return gx, gw


@defop("global-average-pool", linear=True)
def _gap(x):
    return x.mean(axis=(-2, -1))


@_gap.defvjp
def _(g, out, x):
    h, w = x.shape[-2:]
    return (np.broadcast_to(g[..., None, None] / (h * w), x.shape),)


@defop("relu")
def _relu(x):
    return np.maximum(x, 0.0)


@_relu.defvjp
def _(g, out, x):
    return (g * (x > 0),)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@defop("sigmoid")
def _sigmoid(x):
    return sigmoid(x)


@_sigmoid.defvjp
def _(g, out, x):
    return (g * out * (1.0 - out),)


def softmax(z, tau=1.0, axis=-1):
    z = np.asarray(z, dtype=float) / tau
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@defop("softmax")
def _softmax(z, tau=1.0):
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return softmax(z, tau)


@_softmax.defvjp
def _(g, out, z, tau=1.0):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)) / tau,)


@defop("reshape", linear=True)
def _reshape(x, shape):
    return x.reshape(shape)


@_reshape.defvjp
def _(g, out, x, shape):
    return (g.reshape(x.shape),)


@defop("transpose", linear=True)
def _transpose(x, axes):
    return x.transpose(axes)


@_transpose.defvjp
def _(g, out, x, axes):
    return (g.transpose(np.argsort(axes)),)


@defop("slice", linear=True)
def _slice(x, key):
    return x[key].copy()


@_slice.defvjp
def _(g, out, x, key):
    full = np.zeros_like(x)
    full[key] = g
    return (full,)


@defop("sum", linear=True)
def _sum(x):
    return np.sum(x)


@_sum.defvjp
def _(g, out, x):
    return (np.broadcast_to(g, x.shape),)


@defop("scale", linear=True)
def _scale(x, factor):
    return x * factor


@_scale.defvjp
def _(g, out, x, factor):
    return (g * factor,)


@defop("cross-entropy")
def _cross_entropy(logits, labels):
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != logits.shape[:1]:
        raise ValueError(
            f"expect batch×classes logits and batch labels, got labels "
            f"{fmt_shape(labels.shape)}"
        )
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    picked = shifted[np.arange(len(labels)), labels]
    return np.mean(log_z - picked)


@_cross_entropy.defvjp
def _(g, out, logits, labels):
    probs = softmax(logits)
    probs[np.arange(len(labels)), labels] -= 1.0
    return (g * probs / len(labels),)
