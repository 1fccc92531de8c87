"""Population dynamics: closed-form shelving error, rate equations, Gillespie sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from . import rng
from .atomic import (
    FLUORESCING,
    N_MANIFOLDS,
    AtomicConstants,
    Manifold,
    RateModel,
)

POPULATION_TOL = 1e-9


class IntegrationError(RuntimeError):
    pass


def shelving_error_analytic(t, constants: AtomicConstants | None = None):
    """Probability that an ion starting in S(F=1) is still unshelved after ``t``.

    ``tau_D A_M1 / (3 zeta) + (1 - zeta/2) exp(-t zeta / (2 tau_D))``.  Valid
    for ``tau_D * A_M1 << 1`` and with D-state population allowed to decay
    before detection.
    """
    c = constants or AtomicConstants()
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("shelving time must be non-negative")
    out = asymptotic_shelving_error(c) + finite_time_shelving_error(t_arr, c)
    return float(out) if out.ndim == 0 else out


def asymptotic_shelving_error(constants: AtomicConstants) -> float:
    return constants.tau_D * constants.A_M1 / (3.0 * constants.zeta)


def finite_time_shelving_error(t, constants: AtomicConstants):
    z, tau = constants.zeta, constants.tau_D
    return (1.0 - z / 2.0) * np.exp(-np.asarray(t, dtype=float) * z / (2.0 * tau))


def pure_state(m: Manifold) -> np.ndarray:
    p = np.zeros(N_MANIFOLDS)
    p[m] = 1.0
    return p


def check_population(p: np.ndarray, tol: float = POPULATION_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (N_MANIFOLDS,):
        raise ValueError(f"population vector must have {N_MANIFOLDS} entries")
    if np.any(p < -tol) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"not a probability vector: {p}")
    return p


def evolve_ode(init, model: RateModel, t: float, rtol: float = 1e-10,
               atol: float = 1e-14, method: str = "Radau") -> np.ndarray:
    """Integrate dp/dt = p Q from 0 to ``t`` with an adaptive implicit solver."""
    p0 = check_population(init)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return p0.copy()
    qt = model.generator.T
    if t * model.exit_rates.max() < 1.0:
        # Shorter than the fastest lifetime: the propagator is cheap and exact,
        # and the adaptive solver cannot take a first step on subnormal spans.
        return np.clip(expm(qt * t) @ p0, 0.0, None)
    sol = solve_ivp(lambda _, p: qt @ p, (0.0, t), p0, method=method,
                    rtol=rtol, atol=atol, jac=qt)
    if not sol.success:
        raise IntegrationError(f"rate-equation integration failed: {sol.message}")
    p = sol.y[:, -1]
    drift = abs(p.sum() - 1.0)
    if drift > POPULATION_TOL:
        raise IntegrationError(f"population not conserved (|sum - 1| = {drift:.2e})")
    return np.clip(p, 0.0, None)


def absorption_into(model: RateModel, targets) -> np.ndarray:
    """P(eventually absorbed in ``targets``) from each manifold.

    Manifolds with zero exit rate are absorbing.  A transient manifold that
    can reach no absorbing state would make the system singular and raises.
    """
    exit_ = model.exit_rates
    absorbing = exit_ == 0
    targets = {int(m) for m in targets}
    h = np.array([1.0 if (absorbing[i] and i in targets) else 0.0
                  for i in range(N_MANIFOLDS)])
    trans = np.flatnonzero(~absorbing)
    if trans.size:
        q = model.generator
        a = q[np.ix_(trans, trans)]
        b = q[np.ix_(trans, np.flatnonzero(absorbing))] @ h[absorbing]
        h[trans] = np.linalg.solve(a, -b)
    return h


def settled_unshelved(p: np.ndarray, settle_model: RateModel) -> float:
    """Unshelved probability once all transient (D-state) population has decayed."""
    h = absorption_into(settle_model, FLUORESCING)
    return float(np.asarray(p) @ h)


@dataclass(frozen=True)
class Trajectory:
    events: tuple  # ((time, from, to), ...)
    final: Manifold
    duration: float

    def __post_init__(self):
        prev_t, prev_to = 0.0, None
        for time, src, dst in self.events:
            if not (prev_t <= time <= self.duration) or (prev_to is not None and src != prev_to):
                raise ValueError("inconsistent trajectory")
            prev_t, prev_to = time, dst
        if self.events and self.events[-1][2] != self.final:
            raise ValueError("final state does not match last event")


@dataclass
class BatchResult:
    final: np.ndarray
    n_events: np.ndarray
    first_event_time: np.ndarray
    bright_time: np.ndarray
    events: list | None = None


_BRIGHT = np.array([m in FLUORESCING for m in Manifold])


def simulate_batch(init, model: RateModel, duration: float, keys, *,
                   bright_until=None, bright_states=None, record: bool = False,
                   max_steps: int = 10_000_000) -> BatchResult:
    """Gillespie direct method over many independent trajectories at once.

    Trajectory ``i`` consumes draws ``2k`` (waiting time, inverse CDF) and
    ``2k + 1`` (branch) of stream ``keys[i]`` at step ``k``, so its result does
    not depend on what else is in the batch.

    ``bright_time`` is the dwell in ``bright_states`` restricted to
    ``[0, bright_until)``.
    """
    state = np.array(init, dtype=np.int64, copy=True).reshape(-1)
    n = state.size
    keys = np.asarray(keys, dtype=np.uint64).reshape(-1)
    if keys.size != n:
        raise ValueError("need one stream key per trajectory")
    if duration < 0:
        raise ValueError("duration must be non-negative")
    limit = np.full(n, float(duration)) if bright_until is None else \
        np.minimum(np.asarray(bright_until, dtype=float), duration)
    bright = _BRIGHT if bright_states is None else \
        np.array([m in set(bright_states) for m in Manifold])

    exit_ = model.exit_rates
    cdf = model.jump_cdf
    t = np.zeros(n)
    ctr = np.zeros(n, dtype=np.uint64)
    n_events = np.zeros(n, dtype=np.int64)
    first = np.full(n, np.inf)
    bright_time = np.zeros(n)
    events = [[] for _ in range(n)] if record else None

    active = exit_[state] > 0
    idle = ~active
    bright_time[idle] = bright[state[idle]] * np.clip(limit[idle], 0.0, None)

    steps = 0
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        steps += 1
        if steps > max_steps:
            raise RuntimeError("trajectory step limit exceeded")
        s = state[idx]
        c = ctr[idx]
        u = rng.uniform(keys[idx], c)
        tn = t[idx] - np.log(u) / exit_[s]
        done = tn >= duration
        end = np.where(done, duration, tn)
        bright_time[idx] += bright[s] * np.clip(np.minimum(end, limit[idx]) - t[idx], 0.0, None)

        jumped = idx[~done]
        if jumped.size:
            u2 = rng.uniform(keys[jumped], c[~done] + np.uint64(1))
            nxt = (cdf[state[jumped]] <= u2[:, None]).sum(axis=1)
            np.minimum(nxt, N_MANIFOLDS - 1, out=nxt)
            tj = tn[~done]
            if record:
                for j, time, src, dst in zip(jumped, tj, state[jumped], nxt):
                    events[j].append((float(time), Manifold(int(src)), Manifold(int(dst))))
            first[jumped] = np.where(n_events[jumped] == 0, tj, first[jumped])
            n_events[jumped] += 1
            state[jumped] = nxt
            t[jumped] = tj
            stuck = jumped[exit_[nxt] == 0]
            if stuck.size:
                bright_time[stuck] += bright[state[stuck]] * np.clip(limit[stuck] - t[stuck], 0.0, None)
                active[stuck] = False
        ctr[idx] += np.uint64(2)
        active[idx[done]] = False

    return BatchResult(final=state, n_events=n_events, first_event_time=first,
                       bright_time=bright_time, events=events)


def sample_trajectory(init: Manifold, model: RateModel, t: float, rng_seed: int,
                      purpose: str = "trajectory") -> Trajectory:
    """One stochastic trajectory; identical to entry ``rng_seed`` of a batch."""
    keys = rng.stream_keys([rng_seed], purpose)
    res = simulate_batch([int(init)], model, t, keys, record=True)
    return Trajectory(events=tuple(res.events[0]), final=Manifold(int(res.final[0])),
                      duration=float(t))


def sample_final_states(init: Manifold, model: RateModel, t: float, base_seed: int,
                        n: int, purpose: str = "trajectory") -> np.ndarray:
    """Final manifolds of ``n`` trajectories; trajectory ``i`` uses shot stream ``i``."""
    keys = rng.shot_keys(base_seed, np.arange(n), purpose)
    return simulate_batch(np.full(n, int(init)), model, t, keys).final


def fraction_in(states: np.ndarray, manifolds) -> float:
    return float(np.isin(states, [int(m) for m in manifolds]).mean())


