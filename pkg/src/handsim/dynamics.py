"""Continuous-time fields: the time-varying accelerated-gradient ODE in its two
state-space forms, the timer-based restarting flow, disturbance signals, and
the damping-integral diagnostic behind the non-uniformity probe.

Public evaluators (nominal_flow_rep1, hand_flow, ...) validate inputs and
allocate; the make_* factories return allocation-free closures with signature
flow(z, out) for the simulation loop, which assumes in-domain states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import CostFunction

__all__ = [
    "OdeParams",
    "DisturbanceSpec",
    "signal_eval",
    "make_signal",
    "nominal_flow_rep1",
    "nominal_flow_rep2",
    "hand_flow",
    "make_rep1_flow",
    "make_rep2_flow",
    "make_hand_flow",
    "perturbed_flow",
    "limiting_integral",
]


@dataclass(frozen=True)
class OdeParams:
    """Parameters of x'' + (ell/t) x' + c p^2 t^(p-2) grad f(x) = 0.

    ell defaults to p + 1, the value under which the restarting flow is the
    frozen-time specialization of the second state-space form.
    """

    p: float = 2.0
    c: float = 1.0
    ell: Optional[float] = None
    t0: float = 1.0

    def __post_init__(self):
        if self.ell is None:
            object.__setattr__(self, "ell", self.p + 1.0)
        if self.p < 2.0:
            raise ValueError("p must be >= 2, got %r" % (self.p,))
        if not (self.c > 0.0):
            raise ValueError("c must be positive, got %r" % (self.c,))
        if not (self.ell > 1.0):
            raise ValueError("ell must be > 1, got %r" % (self.ell,))
        if not (self.t0 > 0.0):
            raise ValueError("t0 must be positive, got %r" % (self.t0,))


_KINDS = ("zero", "constant", "square_wave", "sinusoid", "uniform_random")


@dataclass(frozen=True)
class DisturbanceSpec:
    """Bounded deterministic signal e: t >= 0 -> R^dim with sup |e(t)| <= eps.

    Signals are constructed under the bound, never clipped. uniform_random is
    a pure function of (seed, floor(t / hold)): piecewise-constant draws from
    the radius-eps ball, reproducible across runs.
    """

    kind: str
    dim: int
    eps: float = 0.0
    period: float = 0.0
    axis: Optional[np.ndarray] = None
    value: Optional[np.ndarray] = None
    seed: int = 0
    hold: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError("unknown disturbance kind %r (known: %s)" % (self.kind, ", ".join(_KINDS)))
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.eps < 0.0:
            raise ValueError("eps must be >= 0")
        if self.kind in ("square_wave", "sinusoid"):
            if not (self.period > 0.0):
                raise ValueError("%s needs period > 0" % self.kind)
            axis = np.asarray(self.axis, dtype=float).reshape(self.dim)
            norm = float(np.linalg.norm(axis))
            if abs(norm - 1.0) > 1e-9:
                raise ValueError("axis must be a unit vector, |axis| = %g" % norm)
            object.__setattr__(self, "axis", axis)
        if self.kind == "constant":
            value = np.asarray(self.value, dtype=float).reshape(self.dim)
            object.__setattr__(self, "value", value)
            object.__setattr__(self, "eps", float(np.linalg.norm(value)))
        if self.kind == "uniform_random" and not (self.hold > 0.0):
            raise ValueError("uniform_random needs hold > 0")

    @staticmethod
    def zero(dim: int) -> "DisturbanceSpec":
        return DisturbanceSpec(kind="zero", dim=dim)

    @staticmethod
    def constant(value) -> "DisturbanceSpec":
        value = np.asarray(value, dtype=float)
        return DisturbanceSpec(kind="constant", dim=value.size, value=value)

    @staticmethod
    def square_wave(dim: int, eps: float, period: float, axis) -> "DisturbanceSpec":
        return DisturbanceSpec(kind="square_wave", dim=dim, eps=eps, period=period, axis=axis)

    @staticmethod
    def sinusoid(dim: int, eps: float, period: float, axis) -> "DisturbanceSpec":
        return DisturbanceSpec(kind="sinusoid", dim=dim, eps=eps, period=period, axis=axis)

    @staticmethod
    def uniform_random(dim: int, eps: float, seed: int, hold: float = 1.0) -> "DisturbanceSpec":
        return DisturbanceSpec(kind="uniform_random", dim=dim, eps=eps, seed=seed, hold=hold)

    def is_zero(self) -> bool:
        return self.kind == "zero" or self.eps == 0.0


def make_signal(spec: DisturbanceSpec) -> Callable[[float], np.ndarray]:
    """Closure t -> e(t). Returned arrays are internal buffers; callers read,
    never mutate."""
    dim = spec.dim
    if spec.kind == "zero" or (spec.eps == 0.0 and spec.kind != "constant"):
        zero = np.zeros(dim)
        return lambda t: zero
    if spec.kind == "constant":
        val = spec.value.copy()
        return lambda t: val
    if spec.kind == "square_wave":
        pos = spec.eps * spec.axis
        neg = -pos
        period = spec.period
        half = 0.5 * period
        # +eps on [0, P/2), -eps on [P/2, P), repeating; phase 0 at t = 0

        def square(t, _pos=pos, _neg=neg, _period=period, _half=half):
            return _pos if math.fmod(t, _period) < _half else _neg

        return square
    if spec.kind == "sinusoid":
        amp = spec.eps * spec.axis
        w = 2.0 * math.pi / spec.period
        return lambda t: amp * math.sin(w * t)
    # uniform_random: redraw per hold interval, cache the last interval
    state = {"k": None, "v": np.zeros(dim)}
    eps, seed, hold = spec.eps, spec.seed, spec.hold

    def uniform(t):
        k = int(math.floor(t / hold))
        if state["k"] != k:
            rng = np.random.default_rng((seed, k))
            g = rng.standard_normal(dim)
            norm = float(np.linalg.norm(g))
            if norm == 0.0:
                state["v"] = np.zeros(dim)
            else:
                radius = eps * rng.random() ** (1.0 / dim)
                state["v"] = (radius / norm) * g
            state["k"] = k
        return state["v"]

    return uniform


def signal_eval(spec: DisturbanceSpec, t: float) -> np.ndarray:
    """One-shot evaluation of the signal at time t >= 0."""
    if t < 0.0:
        raise ValueError("signals are defined for t >= 0, got t=%g" % t)
    return make_signal(spec)(t).copy()


def _check_ode_time(t: float):
    if not (t > 0.0):
        raise ValueError("ODE fields are defined for t > 0, got t=%g" % t)


def nominal_flow_rep1(t: float, x1, x2, params: OdeParams, f: CostFunction):
    """Velocity form: (dx1, dx2) = (x2, -(ell/t) x2 - c p^2 t^(p-2) grad f(x1))."""
    _check_ode_time(t)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    dx1 = x2.copy()
    dx2 = -(params.ell / t) * x2 - params.c * params.p**2 * t ** (params.p - 2.0) * f.gradient(x1)
    return dx1, dx2


def nominal_flow_rep2(t: float, x1, x2, params: OdeParams, f: CostFunction):
    """Averaged form: dx1 = ((ell-1)/t)(x2-x1), dx2 = -(c p^2 t^(p-1)/(ell-1)) grad f(x1)."""
    _check_ode_time(t)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    dx1 = ((params.ell - 1.0) / t) * (x2 - x1)
    dx2 = -(params.c * params.p**2 * t ** (params.p - 1.0) / (params.ell - 1.0)) * f.gradient(x1)
    return dx1, dx2


def hand_flow(z, c: float, f: CostFunction, p: float = 2.0) -> np.ndarray:
    """Restarting flow field on packed z = [x1, x2, tau]:

        dz = ((p/tau)(x2 - x1), -c p tau^(p-1) grad f(x1), 1)

    which for p = 2 is ((2/tau)(x2-x1), -2 c tau grad f(x1), 1). tau <= 0 is
    outside the flow set and rejected.
    """
    z = np.asarray(z, dtype=float)
    n = f.dim
    if z.shape != (2 * n + 1,):
        raise ValueError("packed state must have length %d, got shape %r" % (2 * n + 1, z.shape))
    tau = float(z[-1])
    if not (tau > 0.0):
        raise ValueError("timer must be positive, got tau=%g" % tau)
    out = np.empty(2 * n + 1)
    make_hand_flow(c, f, p=p)(z, out)
    return out


def make_hand_flow(c: float, f: CostFunction, p: float = 2.0) -> Callable[[np.ndarray, np.ndarray], None]:
    """Allocation-light closure flow(z, out) for the restarting field."""
    n = f.dim
    if not (c > 0.0):
        raise ValueError("c must be positive, got %r" % (c,))
    if p == 2.0 and n == 1 and f.gradient_scalar is not None:
        g = f.gradient_scalar
        two_c = 2.0 * c

        def flow1(z, out, _g=g, _two_c=two_c):
            tau = z[2]
            out[0] = (2.0 / tau) * (z[1] - z[0])
            out[1] = -_two_c * tau * _g(z[0])
            out[2] = 1.0

        return flow1
    grad = f.gradient
    if p == 2.0:

        def flow2(z, out, _grad=grad, _c=c, _n=n):
            tau = z[2 * _n]
            x1 = z[:_n]
            np.subtract(z[_n : 2 * _n], x1, out=out[:_n])
            out[:_n] *= 2.0 / tau
            out[_n : 2 * _n] = _grad(x1)
            out[_n : 2 * _n] *= -2.0 * _c * tau
            out[2 * _n] = 1.0

        return flow2

    def flowp(z, out, _grad=grad, _c=c, _n=n, _p=p):
        tau = z[2 * _n]
        x1 = z[:_n]
        np.subtract(z[_n : 2 * _n], x1, out=out[:_n])
        out[:_n] *= _p / tau
        out[_n : 2 * _n] = _grad(x1)
        out[_n : 2 * _n] *= -_c * _p * tau ** (_p - 1.0)
        out[2 * _n] = 1.0

    return flowp


def _make_rep_flow(params: OdeParams, f: CostFunction, rep1: bool) -> Callable:
    """Shared factory for the two ODE forms on packed z = [x1, x2, clock]."""
    n = f.dim
    p, c, ell = params.p, params.c, params.ell
    scalar = n == 1 and f.gradient_scalar is not None
    if rep1:
        coef = c * p * p
        if scalar:
            g = f.gradient_scalar
            if p == 2.0:

                def r1s(z, out, _g=g, _coef=coef, _ell=ell):
                    t = z[2]
                    out[0] = z[1]
                    out[1] = -(_ell / t) * z[1] - _coef * _g(z[0])
                    out[2] = 1.0

                return r1s

            def r1sp(z, out, _g=g, _coef=coef, _ell=ell, _p=p):
                t = z[2]
                out[0] = z[1]
                out[1] = -(_ell / t) * z[1] - _coef * t ** (_p - 2.0) * _g(z[0])
                out[2] = 1.0

            return r1sp

        grad = f.gradient

        def r1v(z, out, _grad=grad, _coef=coef, _ell=ell, _p=p, _n=n):
            t = z[2 * _n]
            out[:_n] = z[_n : 2 * _n]
            out[_n : 2 * _n] = _grad(z[:_n])
            out[_n : 2 * _n] *= -_coef * t ** (_p - 2.0)
            out[_n : 2 * _n] -= (_ell / t) * z[_n : 2 * _n]
            out[2 * _n] = 1.0

        return r1v

    coef = c * p * p / (ell - 1.0)
    if scalar:
        g = f.gradient_scalar

        def r2s(z, out, _g=g, _coef=coef, _ell=ell, _p=p):
            t = z[2]
            out[0] = ((_ell - 1.0) / t) * (z[1] - z[0])
            out[1] = -_coef * t ** (_p - 1.0) * _g(z[0])
            out[2] = 1.0

        return r2s

    grad = f.gradient

    def r2v(z, out, _grad=grad, _coef=coef, _ell=ell, _p=p, _n=n):
        t = z[2 * _n]
        np.subtract(z[_n : 2 * _n], z[:_n], out=out[:_n])
        out[:_n] *= (_ell - 1.0) / t
        out[_n : 2 * _n] = _grad(z[:_n])
        out[_n : 2 * _n] *= -_coef * t ** (_p - 1.0)
        out[2 * _n] = 1.0

    return r2v


def make_rep1_flow(params: OdeParams, f: CostFunction) -> Callable:
    """flow(z, out) for the velocity form; z = [x1, x2, clock], clock is absolute time."""
    return _make_rep_flow(params, f, rep1=True)


def make_rep2_flow(params: OdeParams, f: CostFunction) -> Callable:
    """flow(z, out) for the averaged form; z = [x1, x2, clock]."""
    return _make_rep_flow(params, f, rep1=False)


def perturbed_flow(F: Callable, e_s: Optional[DisturbanceSpec], e_a: Optional[DisturbanceSpec]):
    """Wrap a time-varying field F(t, x) as F(t, x + e_s(t)) + e_a(t).

    State and signal dimensions must agree; a None signal means zero.
    """
    sig_s = make_signal(e_s) if e_s is not None else None
    sig_a = make_signal(e_a) if e_a is not None else None

    def field(t, x):
        x = np.asarray(x, dtype=float)
        if sig_s is not None:
            es = sig_s(t)
            if es.shape != x.shape:
                raise ValueError("state perturbation dim %r does not match state %r" % (es.shape, x.shape))
            x = x + es
        dx = np.asarray(F(t, x), dtype=float)
        if sig_a is not None:
            ea = sig_a(t)
            if ea.shape != dx.shape:
                raise ValueError("dynamics perturbation dim %r does not match state %r" % (ea.shape, dx.shape))
            dx = dx + ea
        return dx

    return field


def limiting_integral(ell2: float, s_k: float, r: float) -> float:
    """Damping mass ell2 * ln((s_k + r + 1)/(s_k + 1)) over a window [s_k, s_k + r].

    Decreases to zero as the window start s_k grows with r fixed, which is the
    vanishing-damping mechanism behind the loss of uniform asymptotic
    stability of the time-varying ODE.
    """
    if not (ell2 > 1.0):
        raise ValueError("ell2 must exceed 1, got %r" % (ell2,))
    if s_k < 0.0:
        raise ValueError("window start must be >= 0, got %r" % (s_k,))
    if r < 0.0:
        raise ValueError("window length must be >= 0, got %r" % (r,))
    if r == 0.0:
        return 0.0
    return ell2 * math.log1p(r / (s_k + 1.0))
