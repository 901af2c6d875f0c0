"""Adam and limited-memory BFGS over named parameter dicts.

Both optimizers mutate ``Tensor.data`` in place and are deterministic given
identical state, inputs, and configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericError
from .tensor import Tensor

Array = np.ndarray
Params = dict[str, Tensor]


@dataclass
class AdamState:
    m: dict[str, Array]
    v: dict[str, Array]
    step: int = 0

    @classmethod
    def for_params(cls, params: Params) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
        )


def adam_step(
    params: Params,
    grads: dict[str, Array],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update. Missing grads are treated as zero."""
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter {p.data.shape} for '{name}'")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class LbfgsState:
    memory: int = 10
    s_hist: list[Array] = field(default_factory=list)
    y_hist: list[Array] = field(default_factory=list)
    rho_hist: list[float] = field(default_factory=list)
    prev_x: Array | None = None
    prev_g: Array | None = None
    step: int = 0

    def clear_history(self) -> None:
        self.s_hist.clear()
        self.y_hist.clear()
        self.rho_hist.clear()
        self.prev_x = None
        self.prev_g = None


@dataclass
class LbfgsResult:
    loss: float
    accepted: bool
    n_evals: int


def _flatten(params: Params) -> Array:
    return np.concatenate([p.data.reshape(-1) for p in params.values()])


def _grad_flat(params: Params, grads: dict[str, Array]) -> Array:
    parts = []
    for name, p in params.items():
        g = grads.get(name)
        parts.append(np.zeros(p.data.size) if g is None else g.reshape(-1))
    return np.concatenate(parts)


def _unflatten_into(params: Params, flat: Array) -> None:
    off = 0
    for p in params.values():
        n = p.data.size
        p.data = flat[off : off + n].reshape(p.data.shape).copy()
        off += n


def _two_loop(g: Array, state: LbfgsState) -> Array:
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(state.s_hist), reversed(state.y_hist), reversed(state.rho_hist)):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    if state.y_hist:
        y_last = state.y_hist[-1]
        s_last = state.s_hist[-1]
        gamma = float(s_last @ y_last) / float(y_last @ y_last)
        q *= gamma
    for (s, y, rho), a in zip(
        zip(state.s_hist, state.y_hist, state.rho_hist), reversed(alphas)
    ):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def lbfgs_step(
    params: Params,
    loss_fn,
    state: LbfgsState,
    max_line_search: int = 25,
    armijo: float = 1e-4,
) -> LbfgsResult:
    """One L-BFGS step with backtracking line search.

    ``loss_fn()`` evaluates the objective at the current parameter values and
    returns ``(loss, grads)``; it must be deterministic for the duration of
    the step. Curvature pairs enter the history only when s.y > 0. On line
    search failure the parameters are restored, the history is cleared, and
    ``accepted`` is False.
    """
    state.step += 1
    x0 = _flatten(params)
    f0, grads = loss_fn()
    g0 = _grad_flat(params, grads)
    n_evals = 1
    if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise NumericError("non-finite loss or gradient at line-search origin")

    if state.prev_x is not None:
        s = x0 - state.prev_x
        y = g0 - state.prev_g
        sy = float(s @ y)
        if sy > 0.0:
            state.s_hist.append(s)
            state.y_hist.append(y)
            state.rho_hist.append(1.0 / sy)
            if len(state.s_hist) > state.memory:
                state.s_hist.pop(0)
                state.y_hist.pop(0)
                state.rho_hist.pop(0)

    gnorm = float(np.linalg.norm(g0))
    if gnorm == 0.0:
        state.prev_x = x0
        state.prev_g = g0
        return LbfgsResult(loss=f0, accepted=True, n_evals=n_evals)

    d = -_two_loop(g0, state)
    slope = float(g0 @ d)
    if slope >= 0.0:
        state.clear_history()
        d = -g0
        slope = -gnorm * gnorm

    t = 1.0 if state.s_hist else min(1.0, 1.0 / gnorm)
    for _ in range(max_line_search):
        _unflatten_into(params, x0 + t * d)
        f_t = loss_fn()[0]
        n_evals += 1
        if np.isfinite(f_t) and f_t <= f0 + armijo * t * slope:
            state.prev_x = x0
            state.prev_g = g0
            return LbfgsResult(loss=f_t, accepted=True, n_evals=n_evals)
        t *= 0.5

    _unflatten_into(params, x0)
    state.clear_history()
    return LbfgsResult(loss=f0, accepted=False, n_evals=n_evals)
