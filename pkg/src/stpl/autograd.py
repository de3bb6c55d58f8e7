"""Reverse-mode differentiation over the tensor primitives.

Each primitive application is recorded on an explicit tape together with a
pullback closure holding exactly the residuals its backward rule needs.
`backward` replays the tape in exact reverse recording order (a valid
topological order by construction) and accumulates gradients with +=, so a
value consumed by several later ops (the encoder skip, the residual branches)
sums its contributions.

Mirrors the tensor module's public primitives one-for-one on Variables; a
completeness assertion at the bottom fails the import if any forward
primitive lacks a backward rule here.

Subgraphs built purely from constants (e.g. the regularizer's target branch)
are not recorded and cost nothing in the backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, TapeError
from .rng import Stream, mix
from .tensor import ConvSpec, Tensor


class Parameter:
    """A tensor being optimized: value plus an accumulated-gradient twin."""

    __slots__ = ("id", "value", "grad")

    def __init__(self, id: str, value: Tensor):
        self.id = id
        self.value = value
        self.grad = Tensor.zeros(value.shape, dtype=value.dtype)

    def zero_grad(self) -> None:
        self.grad.data[...] = 0.0

    def cast_(self, dtype) -> None:
        self.value = self.value.astype(dtype)
        self.grad = Tensor.zeros(self.value.shape, dtype=dtype)

    def __repr__(self) -> str:
        return f"Parameter({self.id!r}, shape={self.value.shape})"


class Variable:
    """A tensor value positioned in a taped computation."""

    __slots__ = ("value", "tape", "param", "grad", "tracked")

    def __init__(self, value: Tensor, tape=None, param=None, tracked=False):
        self.value = value
        self.tape = tape
        self.param = param
        self.grad = None
        self.tracked = tracked

    @staticmethod
    def constant(value: Tensor) -> "Variable":
        return Variable(value)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __repr__(self) -> str:
        kind = "param" if self.param is not None else ("tracked" if self.tracked else "const")
        return f"Variable({kind}, shape={self.value.shape})"


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self):
        self._nodes = []
        self._consumed = False
        self._param_leaves = {}
        self._sources = []

    def watch(self, param: Parameter) -> Variable:
        """Leaf Variable for a Parameter; cached so repeated watches share it."""
        existing = self._param_leaves.get(param.id)
        if existing is not None:
            leaf_param, leaf = existing
            if leaf_param is not param:
                raise TapeError(f"two distinct parameters share the id {param.id!r}")
            return leaf
        leaf = Variable(param.value, tape=self, param=param, tracked=True)
        self._param_leaves[param.id] = (param, leaf)
        return leaf

    def source(self, value: Tensor) -> Variable:
        """Leaf for a non-parameter input whose gradient should be retained."""
        leaf = Variable(value, tape=self, tracked=True)
        self._sources.append(leaf)
        return leaf

    def record(self, output: Variable, inputs: tuple, pullback) -> None:
        """Append a node. Public so tests can record deliberately wrong rules."""
        if self._consumed:
            raise TapeError("cannot record on a consumed tape")
        self._nodes.append((output, tuple(inputs), pullback))

    def __len__(self) -> int:
        return len(self._nodes)


def backward(tape: Tape, loss: Variable) -> None:
    """Accumulate d(loss)/d(param) into every watched Parameter's grad."""
    if tape._consumed:
        raise TapeError("tape already consumed by a backward pass")
    tape._consumed = True
    if not isinstance(loss, Variable):
        raise ConfigError("backward needs the loss Variable produced on this tape")
    if loss.value.shape != (1,):
        raise ConfigError(f"loss must be scalar (shape (1,)), got {loss.value.shape}")
    if loss.tape is not tape:
        raise TapeError("loss was not produced on this tape")

    grads = {id(loss): np.ones_like(loss.value.data)}
    for out, inputs, pullback in reversed(tape._nodes):
        gout = grads.pop(id(out), None)
        if gout is None:
            continue
        gins = pullback(gout)
        for var, gin in zip(inputs, gins):
            if gin is None or not isinstance(var, Variable) or not var.tracked:
                continue
            prev = grads.get(id(var))
            grads[id(var)] = gin if prev is None else prev + gin

    for param, leaf in tape._param_leaves.values():
        g = grads.get(id(leaf))
        if g is not None:
            param.grad.data += g
    for leaf in tape._sources:
        g = grads.get(id(leaf))
        leaf.grad = None if g is None else Tensor(np.ascontiguousarray(g))
    tape._nodes.clear()


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Variable ops


REGISTERED = {}


def _rule(name):
    def deco(fn):
        REGISTERED[name] = fn
        return fn

    return deco


def _as_var(x, name: str) -> Variable:
    if isinstance(x, Variable):
        return x
    if isinstance(x, Tensor):
        return Variable.constant(x)
    raise ConfigError(f"{name} must be a Variable or Tensor, got {type(x).__name__}")


def _find_tape(*variables):
    tape = None
    for v in variables:
        if v.tracked:
            if tape is None:
                tape = v.tape
            elif tape is not v.tape:
                raise TapeError("inputs were recorded on different tapes")
    return tape


def _emit(tape, out_arr, inputs, make_pullback) -> Variable:
    out = Variable(Tensor._wrap(out_arr), tape=tape, tracked=tape is not None)
    if tape is not None:
        tape.record(out, inputs, make_pullback())
    return out


@_rule("conv2d")
def conv2d(x, weight, bias, spec: ConvSpec) -> Variable:
    x, weight, bias = _as_var(x, "x"), _as_var(weight, "weight"), _as_var(bias, "bias")
    T._check_conv2d(x.value, weight.value, bias.value, spec)
    out_arr, col = T._conv2d_arrays(x.value.data, weight.value.data, bias.value.data, spec)
    tape = _find_tape(x, weight, bias)

    def make():
        x_shape, w_arr = x.value.shape, weight.value.data

        def pullback(g):
            gx, gw, gb = T._conv2d_grads(g, x_shape, w_arr, col, spec)
            return (
                gx if x.tracked else None,
                gw if weight.tracked else None,
                gb if bias.tracked else None,
            )

        return pullback

    return _emit(tape, out_arr, (x, weight, bias), make)


@_rule("conv_transpose2d")
def conv_transpose2d(x, weight, bias, spec: ConvSpec) -> Variable:
    x, weight, bias = _as_var(x, "x"), _as_var(weight, "weight"), _as_var(bias, "bias")
    T._check_conv_transpose2d(x.value, weight.value, bias.value, spec)
    out_arr = T._conv_transpose2d_arrays(x.value.data, weight.value.data, bias.value.data, spec)
    tape = _find_tape(x, weight, bias)

    def make():
        x_arr, w_arr = x.value.data, weight.value.data

        def pullback(g):
            gx, gw, gb = T._conv_transpose2d_grads(g, x_arr, w_arr, spec)
            return (
                gx if x.tracked else None,
                gw if weight.tracked else None,
                gb if bias.tracked else None,
            )

        return pullback

    return _emit(tape, out_arr, (x, weight, bias), make)


@_rule("linear")
def linear(x, weight, bias) -> Variable:
    x, weight, bias = _as_var(x, "x"), _as_var(weight, "weight"), _as_var(bias, "bias")
    T._check_linear(x.value, weight.value, bias.value)
    out_arr = T._linear_arrays(x.value.data, weight.value.data, bias.value.data)
    tape = _find_tape(x, weight, bias)

    def make():
        x_arr, w_arr = x.value.data, weight.value.data

        def pullback(g):
            gx, gw, gb = T._linear_grads(g, x_arr, w_arr)
            return (
                gx if x.tracked else None,
                gw if weight.tracked else None,
                gb if bias.tracked else None,
            )

        return pullback

    return _emit(tape, out_arr, (x, weight, bias), make)


@_rule("global_avg_pool")
def global_avg_pool(x) -> Variable:
    x = _as_var(x, "x")
    T._require_rank(x.value, 4, "global_avg_pool input")
    out_arr = T._gap_arrays(x.value.data)
    tape = _find_tape(x)

    def make():
        x_shape = x.value.shape
        return lambda g: (T._gap_grads(g, x_shape),)

    return _emit(tape, out_arr, (x,), make)


@_rule("softmax_over_axes")
def softmax_over_axes(x, axes, temperature: float = 1.0) -> Variable:
    x = _as_var(x, "x")
    axes = T._check_axes(x.value, axes)
    temperature = T._check_temperature(temperature)
    p = T._softmax_arrays(x.value.data, axes, temperature)
    tape = _find_tape(x)

    def make():
        return lambda g: (T._softmax_grads(g, p, axes, temperature),)

    return _emit(tape, p, (x,), make)


@_rule("log_softmax_over_axes")
def log_softmax_over_axes(x, axes, temperature: float = 1.0) -> Variable:
    x = _as_var(x, "x")
    axes = T._check_axes(x.value, axes)
    temperature = T._check_temperature(temperature)
    lp = T._log_softmax_arrays(x.value.data, axes, temperature)
    tape = _find_tape(x)

    def make():
        return lambda g: (T._log_softmax_grads(g, lp, axes, temperature),)

    return _emit(tape, lp, (x,), make)


@_rule("group_norm")
def group_norm(x, groups: int, gain, shift, eps: float = 1e-5) -> Variable:
    x, gain, shift = _as_var(x, "x"), _as_var(gain, "gain"), _as_var(shift, "shift")
    T._check_group_norm(x.value, groups, gain.value, shift.value)
    out_arr, xhat, inv = T._group_norm_arrays(x.value.data, groups, gain.value.data, shift.value.data, eps)
    tape = _find_tape(x, gain, shift)

    def make():
        gain_arr = gain.value.data

        def pullback(g):
            dx, dgain, dshift = T._group_norm_grads(g, xhat, inv, gain_arr, groups)
            return (
                dx if x.tracked else None,
                dgain if gain.tracked else None,
                dshift if shift.tracked else None,
            )

        return pullback

    return _emit(tape, out_arr, (x, gain, shift), make)


@_rule("sigmoid")
def sigmoid(x) -> Variable:
    x = _as_var(x, "x")
    s = T._sigmoid_arrays(x.value.data)
    tape = _find_tape(x)

    def make():
        return lambda g: (g * s * (1.0 - s),)

    return _emit(tape, s, (x,), make)


@_rule("silu")
def silu(x) -> Variable:
    x = _as_var(x, "x")
    out_arr, s = T._silu_arrays(x.value.data)
    tape = _find_tape(x)

    def make():
        x_arr = x.value.data
        return lambda g: (T._silu_grads(g, x_arr, s),)

    return _emit(tape, out_arr, (x,), make)


@_rule("exp")
def exp(x) -> Variable:
    x = _as_var(x, "x")
    out_arr = np.exp(x.value.data)
    tape = _find_tape(x)

    def make():
        return lambda g: (g * out_arr,)

    return _emit(tape, out_arr, (x,), make)


@_rule("add")
def add(a, b) -> Variable:
    a, b = _as_var(a, "a"), _as_var(b, "b")
    T._check_same_shape(a.value, b.value, "add")
    tape = _find_tape(a, b)

    def make():
        return lambda g: (g if a.tracked else None, g if b.tracked else None)

    return _emit(tape, a.value.data + b.value.data, (a, b), make)


@_rule("sub")
def sub(a, b) -> Variable:
    a, b = _as_var(a, "a"), _as_var(b, "b")
    T._check_same_shape(a.value, b.value, "sub")
    tape = _find_tape(a, b)

    def make():
        return lambda g: (g if a.tracked else None, -g if b.tracked else None)

    return _emit(tape, a.value.data - b.value.data, (a, b), make)


@_rule("mul")
def mul(a, b) -> Variable:
    a, b = _as_var(a, "a"), _as_var(b, "b")
    T._check_same_shape(a.value, b.value, "mul")
    tape = _find_tape(a, b)

    def make():
        a_arr, b_arr = a.value.data, b.value.data
        return lambda g: (g * b_arr if a.tracked else None, g * a_arr if b.tracked else None)

    return _emit(tape, a.value.data * b.value.data, (a, b), make)


@_rule("scalar_mul")
def scalar_mul(x, scalar: float) -> Variable:
    x = _as_var(x, "x")
    c = x.value.dtype.type(scalar)
    tape = _find_tape(x)

    def make():
        return lambda g: (g * c,)

    return _emit(tape, x.value.data * c, (x,), make)


@_rule("broadcast_mul")
def broadcast_mul(x, gate) -> Variable:
    x, gate = _as_var(x, "x"), _as_var(gate, "gate")
    T._check_broadcast_mul(x.value, gate.value)
    tape = _find_tape(x, gate)

    def make():
        x_arr, gate_arr = x.value.data, gate.value.data

        def pullback(g):
            gx = g * gate_arr if x.tracked else None
            ggate = (g * x_arr).sum(axis=(2, 3), keepdims=True) if gate.tracked else None
            return gx, ggate

        return pullback

    return _emit(tape, x.value.data * gate.value.data, (x, gate), make)


@_rule("reshape")
def reshape(x, shape) -> Variable:
    x = _as_var(x, "x")
    out = T.reshape(x.value, shape)
    tape = _find_tape(x)

    def make():
        in_shape = x.value.shape
        return lambda g: (np.reshape(g, in_shape),)

    out_var = Variable(out, tape=tape, tracked=tape is not None)
    if tape is not None:
        tape.record(out_var, (x,), make())
    return out_var


@_rule("reduce_sum")
def reduce_sum(x, axes=None, keepdims: bool = False) -> Variable:
    x = _as_var(x, "x")
    norm_axes = T._normalize_reduce_axes(x.value, axes)
    out_arr = T._reduce_out(x.value.data.sum(axis=norm_axes, keepdims=keepdims), keepdims)
    tape = _find_tape(x)

    def make():
        in_shape = x.value.shape
        return lambda g: (T._reduce_expand(g, in_shape, norm_axes, keepdims),)

    return _emit(tape, out_arr, (x,), make)


@_rule("reduce_mean")
def reduce_mean(x, axes=None, keepdims: bool = False) -> Variable:
    x = _as_var(x, "x")
    norm_axes = T._normalize_reduce_axes(x.value, axes)
    out_arr = T._reduce_out(x.value.data.mean(axis=norm_axes, keepdims=keepdims), keepdims)
    tape = _find_tape(x)

    def make():
        in_shape = x.value.shape
        count = math.prod(in_shape[a] for a in norm_axes)
        return lambda g: (T._reduce_expand(g / count, in_shape, norm_axes, keepdims),)

    return _emit(tape, out_arr, (x,), make)


@_rule("time_diff")
def time_diff(x) -> Variable:
    x = _as_var(x, "x")
    T._check_time_diff(x.value)
    out_arr = T._time_diff_arrays(x.value.data)
    tape = _find_tape(x)

    def make():
        in_shape, dtype = x.value.shape, x.value.dtype
        return lambda g: (T._time_diff_grads(g, in_shape, dtype),)

    return _emit(tape, out_arr, (x,), make)


@_rule("clamp")
def clamp(x, lo: float, hi: float) -> Variable:
    x = _as_var(x, "x")
    if not (lo <= hi):
        raise ConfigError(f"clamp bounds inverted: {lo} > {hi}")
    x_arr = x.value.data
    out_arr = np.clip(x_arr, lo, hi)
    tape = _find_tape(x)

    def make():
        mask = ((x_arr >= lo) & (x_arr <= hi)).astype(x_arr.dtype)
        return lambda g: (g * mask,)

    return _emit(tape, out_arr, (x,), make)


# ---------------------------------------------------------------------------
# Finite-difference verification


@dataclass
class ParamCheck:
    param_id: str
    samples: int
    max_rel_error: float
    worst_flat_index: int
    analytic_at_worst: float
    fd_at_worst: float
    nonfinite_evals: int


@dataclass
class FDReport:
    step: float
    tolerance: float
    overall_max_rel_error: float = 0.0
    nonfinite_evals: int = 0
    per_param: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.nonfinite_evals == 0 and self.overall_max_rel_error <= self.tolerance

    def summary(self) -> str:
        lines = [
            f"finite-difference check: step={self.step} tolerance={self.tolerance}",
            f"overall max relative error: {self.overall_max_rel_error:.3e}"
            f" ({'PASS' if self.passed else 'FAIL'})",
        ]
        for c in self.per_param:
            lines.append(
                f"  {c.param_id}: max_rel={c.max_rel_error:.3e} over {c.samples} samples"
                + (f" [{c.nonfinite_evals} non-finite evals]" if c.nonfinite_evals else "")
            )
        return "\n".join(lines)


def finite_difference_check(
    loss_fn,
    params,
    *,
    step: float = 1e-3,
    tolerance: float = 1e-4,
    max_samples: int = 64,
    seed: int = 0,
    rel_floor: float = 1e-6,
) -> FDReport:
    """Compare taped gradients of `loss_fn` against central differences.

    `loss_fn(tape)` must rebuild the computation from current parameter
    values and return the scalar loss Variable. Probes sample at most
    `max_samples` elements per parameter. Relative error uses
    max(|analytic|, |fd|, rel_floor) as the denominator so dead elements do
    not divide by zero. Non-finite probe evaluations are counted in the
    report (and fail it), never raised.
    """
    if step <= 0:
        raise ConfigError(f"step must be positive, got {step}")
    zero_grads(params)
    tape = Tape()
    backward(tape, loss_fn(tape))
    analytic = {p.id: p.grad.data.copy().reshape(-1) for p in params}

    def probe() -> float:
        return loss_fn(Tape()).value.item()

    stream = Stream(mix(seed, 0xFDFD))
    report = FDReport(step=step, tolerance=tolerance)
    for p in params:
        flat = p.value.data.reshape(-1)
        if flat.size <= max_samples:
            indices = range(flat.size)
        else:
            chosen = set()
            while len(chosen) < max_samples:
                chosen.add(stream.next_below(flat.size))
            indices = sorted(chosen)
        check = ParamCheck(p.id, 0, 0.0, -1, 0.0, 0.0, 0)
        for i in indices:
            saved = flat[i]
            flat[i] = saved + step
            up = probe()
            flat[i] = saved - step
            down = probe()
            flat[i] = saved
            check.samples += 1
            if not (math.isfinite(up) and math.isfinite(down)):
                check.nonfinite_evals += 1
                continue
            fd = (up - down) / (2.0 * step)
            an = float(analytic[p.id][i])
            rel = abs(fd - an) / max(abs(fd), abs(an), rel_floor)
            if rel > check.max_rel_error:
                check.max_rel_error = rel
                check.worst_flat_index = i
                check.analytic_at_worst = an
                check.fd_at_worst = fd
        report.per_param.append(check)
        report.nonfinite_evals += check.nonfinite_evals
        report.overall_max_rel_error = max(report.overall_max_rel_error, check.max_rel_error)
    return report


_missing = sorted(set(T.PRIMITIVES) - set(REGISTERED))
if _missing:
    raise AssertionError(f"primitives without a backward rule: {_missing}")
