"""Time steppers: forward Euler, staggered Verlet, adaptive Dormand-Prince 5(4).

States may be arrays of any shape; the DOPRI5 error norm is an RMS over all
entries. The tableau and dense-output coefficients are the published
Dormand-Prince / Hairer values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Rhs = Callable[[float, np.ndarray], np.ndarray]

# Dormand-Prince tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
# 5th-order weights (also row 7, so the last stage is f at the new point: FSAL)
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# difference between 5th- and 4th-order weights
E1 = 71 / 57600
E3 = -71 / 16695
E4 = 71 / 1920
E5 = -17253 / 339200
E6 = 22 / 525
E7 = -1 / 40
# Hairer's dense-output coefficients
D1 = -12715105075 / 11282082432
D3 = 87487479700 / 32700410799
D4 = -10690763975 / 1880347072
D5 = 701980252875 / 199316789632
D6 = -1453857185 / 822651844
D7 = 69997945 / 29380423


class IntegratorError(RuntimeError):
    def __init__(self, msg, record=None):
        super().__init__(msg)
        self.record = record


class NonConvergenceError(IntegratorError):
    """Step budget exhausted before reaching the end of the interval."""


class StiffnessError(IntegratorError):
    """Step size fell below ``h_min``."""


@dataclass(frozen=True)
class StepControl:
    rtol: float = 1e-6
    atol: float = 1e-8
    h_init: Optional[float] = None
    h_min: float = 1e-14
    h_max: float = math.inf
    max_steps: int = 100_000
    safety: float = 0.9

    def __post_init__(self):
        if not (0 < self.h_min <= self.h_max):
            raise ValueError("need 0 < h_min <= h_max")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")

    @classmethod
    def tight(cls) -> "StepControl":
        return cls(rtol=1e-10, atol=1e-12)


def euler_step(state, t, h, rhs: Rhs):
    return state + h * rhs(t, state)


def verlet_step(y, z, t, h, rhs_y, rhs_z):
    """Staggered update: y' = y + h*rhs_y(z, t); z' = z - h*rhs_z(y', t)."""
    y1 = y + h * rhs_y(z, t)
    z1 = z - h * rhs_z(y1, t)
    return y1, z1


def verlet_unstep(y1, z1, t, h, rhs_y, rhs_z):
    """Exact inverse of :func:`verlet_step` (evaluation order reversed)."""
    z = z1 + h * rhs_z(y1, t)
    y = y1 - h * rhs_y(z, t)
    return y, z


@dataclass
class _Segment:
    t: float
    h: float
    rcont: tuple


@dataclass
class SolveRecord:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    n_rhs_evals: int = 0
    n_rejected: int = 0
    dense_times: list = field(default_factory=list)
    dense_states: list = field(default_factory=list)
    segments: list = field(default_factory=list, repr=False)

    @property
    def n_accepted(self) -> int:
        return max(len(self.times) - 1, 0)

    @property
    def y_final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def direction(self) -> float:
        return 1.0 if self.times[-1] >= self.times[0] else -1.0

    def __call__(self, t: float) -> np.ndarray:
        """4th-order continuous extension at time ``t`` within the solved span."""
        if not self.segments:
            return self.states[0].copy()
        d = self.direction
        # segment starts, in integration order
        starts = self._starts
        k = int(np.searchsorted(d * starts, d * t, side="right")) - 1
        k = min(max(k, 0), len(self.segments) - 1)
        return _dense_eval(self.segments[k], t)

    @property
    def _starts(self):
        cache = getattr(self, "_starts_cache", None)
        if cache is None or len(cache) != len(self.segments):
            cache = np.array([seg.t for seg in self.segments])
            self._starts_cache = cache
        return cache


def _dense_eval(seg: _Segment, t: float) -> np.ndarray:
    r1, r2, r3, r4, r5 = seg.rcont
    th = (t - seg.t) / seg.h
    th1 = 1.0 - th
    return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)))


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def _initial_step(rhs, t0, y0, f0, direction, span, ctrl, record):
    scale = ctrl.atol + np.abs(y0) * ctrl.rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + direction * h0 * f0
    f1 = rhs(t0 + direction * h0, y1)
    record.n_rhs_evals += 1
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        # the field vanishes locally: take the whole interval and let error control decide
        h = span
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
        h = min(100 * h0, h1)
    return min(h, span, ctrl.h_max)


def dopri5_solve(
    rhs: Rhs,
    state0,
    t_span: tuple,
    ctrl: StepControl = StepControl(),
    dense_at: Optional[Sequence[float]] = None,
    keep_dense: bool = True,
) -> SolveRecord:
    """Integrate ``du/dt = rhs(t, u)`` over ``t_span`` (either direction).

    Accepted states and per-step interpolation data are kept in the returned
    record, which can then be called like a function of ``t``.
    """
    ta, tb = float(t_span[0]), float(t_span[1])
    if ta == tb:
        raise ValueError("empty integration interval")
    direction = 1.0 if tb > ta else -1.0
    span = abs(tb - ta)
    y = np.array(state0, dtype=float, copy=True)
    t = ta

    record = SolveRecord(times=[t], states=[y.copy()])
    f = rhs(t, y)
    record.n_rhs_evals += 1

    if ctrl.h_init is not None:
        h = min(abs(ctrl.h_init), span, ctrl.h_max)
    else:
        h = _initial_step(rhs, t, y, f, direction, span, ctrl, record)

    requested = sorted(dense_at or [], key=lambda s: direction * s)
    req_i = 0
    n_steps = 0
    last_rejected = False

    while direction * (tb - t) > 0:
        if n_steps >= ctrl.max_steps:
            raise NonConvergenceError(
                f"max_steps={ctrl.max_steps} exceeded at t={t}", record
            )
        if h < ctrl.h_min:
            raise StiffnessError(f"step size {h:.3e} below h_min at t={t}", record)
        n_steps += 1

        # do not overshoot; absorb tiny remainders
        remaining = abs(tb - t)
        if h >= remaining or remaining - h < 1e-12 * span:
            h = remaining
        hs = direction * h

        k1 = f
        k2 = rhs(t + C2 * hs, y + hs * (A21 * k1))
        k3 = rhs(t + C3 * hs, y + hs * (A31 * k1 + A32 * k2))
        k4 = rhs(t + C4 * hs, y + hs * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = rhs(t + C5 * hs, y + hs * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        k6 = rhs(t + hs, y + hs * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        y_new = y + hs * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        t_new = t + hs if h < remaining else tb
        k7 = rhs(t_new, y_new)
        record.n_rhs_evals += 6

        err_vec = hs * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        scale = ctrl.atol + ctrl.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(err_vec / scale)

        if err <= 1.0:
            if keep_dense or requested:
                r2 = y_new - y
                r3 = hs * k1 - r2
                r4 = r2 - hs * k7 - r3
                r5 = hs * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7)
                seg = _Segment(t, hs, (y, r2, r3, r4, r5))
                while req_i < len(requested) and direction * (requested[req_i] - t_new) <= 0:
                    tr = requested[req_i]
                    record.dense_times.append(tr)
                    record.dense_states.append(_dense_eval(seg, tr))
                    req_i += 1
                if keep_dense:
                    record.segments.append(seg)
            t, y, f = t_new, y_new, k7
            record.times.append(t)
            record.states.append(y)
            factor = ctrl.safety * err ** -0.2 if err > 0 else 5.0
            factor = min(5.0, max(0.2, factor))
            if last_rejected:
                factor = min(factor, 1.0)
            last_rejected = False
        else:
            record.n_rejected += 1
            factor = max(0.2, ctrl.safety * err ** -0.2)
            last_rejected = True
        h = min(h * factor, ctrl.h_max)

    return record


def dopri5_solve_reverse(rhs: Rhs, stateT, t_span: tuple, ctrl: StepControl = StepControl(), **kw):
    """Backward-in-time solve; ``t_span = (T, t0)`` with ``T > t0``."""
    if not t_span[0] > t_span[1]:
        raise ValueError("reverse solve expects t_span[0] > t_span[1]")
    return dopri5_solve(rhs, stateT, t_span, ctrl, **kw)
