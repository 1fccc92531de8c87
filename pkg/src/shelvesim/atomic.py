"""Electronic state space, constants and transition-rate tables for 171Yb+.

Populations are tracked per manifold (a group of levels treated as one
reservoir).  Lasers enter only through effective rates, so the model is a
continuous-time Markov chain whose generator is built by
:func:`build_rate_model`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np


class Manifold(enum.IntEnum):
    S_F0 = 0
    S_F1 = 1
    D52 = 2
    D32_F1 = 3
    D32_F2 = 4
    F72 = 5
    LOST = 6


N_MANIFOLDS = len(Manifold)
GROUND = (Manifold.S_F0, Manifold.S_F1)
# Manifolds that scatter photons under the cooling/detection light.
FLUORESCING = frozenset(GROUND)


class ConfigError(ValueError):
    """An atomic or laser configuration violates its invariants."""


@dataclass(frozen=True)
class AtomicConstants:
    """Atomic parameters, SI units.  Angular rates are in rad/s."""

    zeta: float = 0.824
    tau_D: float = 7.2e-3
    A_M1: float = 2 * math.pi * 4.5e-3
    gamma_411: float = 2 * math.pi * 22.0
    omega_q: float = 2 * math.pi * 12.64e9
    tau_deshelve: float = 350e-6
    # One-sigma uncertainties, only used for systematic error propagation.
    zeta_err: float = 0.004
    tau_D_err: float = 0.3e-3

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 < self.zeta < 1:
            raise ConfigError(f"zeta must lie in (0, 1), got {self.zeta}")
        if not self.tau_D > 0:
            raise ConfigError(f"tau_D must be positive, got {self.tau_D}")
        if not self.A_M1 >= 0:
            raise ConfigError(f"A_M1 must be non-negative, got {self.A_M1}")
        if not self.A_M1 * self.tau_D < 1e-2:
            raise ConfigError(
                f"A_M1 * tau_D = {self.A_M1 * self.tau_D:.3g} is not small; "
                "the weak-leak approximation needs it below 1e-2"
            )
        if self.zeta + self.A_M1 * self.tau_D > 1:
            raise ConfigError("D5/2 branching fractions exceed one")
        if not self.tau_deshelve > 0:
            raise ConfigError("tau_deshelve must be positive")
        if self.zeta_err < 0 or self.tau_D_err < 0:
            raise ConfigError("uncertainties must be non-negative")

    @property
    def m1_branching(self) -> float:
        """Fraction of D5/2 decays that go to D3/2 via the M1 channel."""
        return self.A_M1 * self.tau_D

    def with_A_M1_mHz(self, mhz: float) -> "AtomicConstants":
        return replace(self, A_M1=2 * math.pi * mhz * 1e-3)


def _default_deshelve_rate(repump_rate: float = 1e4, tau: float = 350e-6) -> float:
    """760 nm rate giving a 1/e ground-state return time of ``tau``.

    The return path is F7/2 -> D3/2(F=1) -> S, two sequential exponential
    steps, so the returned fraction at ``tau`` must equal 1 - 1/e.
    """
    from scipy.optimize import brentq

    target = 1.0 - math.exp(-1.0)

    def returned(k):
        if abs(k - repump_rate) < 1e-9:
            k += 1e-6
        return 1.0 - (repump_rate * math.exp(-k * tau) - k * math.exp(-repump_rate * tau)) / (
            repump_rate - k
        )

    return brentq(lambda k: returned(k) - target, 1.0, repump_rate * 0.999)


# Precomputed from _default_deshelve_rate() with the default 935 nm rate.
DEFAULT_DESHELVE_RATE = 4285.07374


@dataclass(frozen=True)
class LaserConfig:
    """On/off state of every beam plus its effective rate (1/s).

    ``pump_rate_411`` drives S(F=1) <-> D5/2 in both directions (absorption
    and stimulated emission), which is the rate-equation picture of a
    saturated narrow line.  The default places the slow eigenvalue of that
    two-level subsystem within 1% of zeta / (2 tau_D).
    """

    on_411: bool = False
    on_935: bool = False
    on_861: bool = False
    on_deshelve_760: bool = False
    on_976: bool = False
    on_cooling: bool = False
    pump_rate_411: float = 4.0e3
    repump_rate_935: float = 1.0e4
    repump_rate_861: float = 1.0e4
    deshelve_rate_760: float = DEFAULT_DESHELVE_RATE
    repump_rate_976: float = 1.0e4

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("pump_rate_411", "repump_rate_935", "repump_rate_861",
                     "deshelve_rate_760", "repump_rate_976"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        if self.on_411 and self.on_935 and self.on_861:
            raise ConfigError(
                "935 nm and 861 nm repumps are alternative schemes and cannot "
                "both be on while shelving"
            )

    def with_flags(self, **flags) -> "LaserConfig":
        """Copy with every flag cleared except those given as True."""
        base = dict(on_411=False, on_935=False, on_861=False,
                    on_deshelve_760=False, on_976=False, on_cooling=False)
        base.update(flags)
        return replace(self, **base)


REPUMP_SCHEMES = ("nm935", "nm861")


def shelving_config(base: LaserConfig, scheme: str = "nm935") -> LaserConfig:
    if scheme not in REPUMP_SCHEMES:
        raise ConfigError(f"unknown repump scheme {scheme!r}")
    return base.with_flags(on_411=True, on_935=scheme == "nm935", on_861=scheme == "nm861")


def detection_config(base: LaserConfig) -> LaserConfig:
    return base.with_flags(on_cooling=True, on_935=True)


def deshelving_config(base: LaserConfig) -> LaserConfig:
    return base.with_flags(on_deshelve_760=True, on_976=True, on_935=True, on_cooling=True)


@dataclass(frozen=True)
class RateModel:
    """Transition-rate table over :class:`Manifold` (row = from, column = to)."""

    rates: np.ndarray
    config: LaserConfig
    constants: AtomicConstants
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.rates.setflags(write=False)

    @property
    def exit_rates(self) -> np.ndarray:
        if "exit" not in self._cache:
            r = self.rates.copy()
            np.fill_diagonal(r, 0.0)
            self._cache["exit"] = r.sum(axis=1)
        return self._cache["exit"]

    @property
    def generator(self) -> np.ndarray:
        """CTMC generator Q with dp/dt = p Q."""
        if "Q" not in self._cache:
            q = self.rates.copy()
            np.fill_diagonal(q, 0.0)
            np.fill_diagonal(q, -q.sum(axis=1))
            self._cache["Q"] = q
        return self._cache["Q"]

    @property
    def jump_cdf(self) -> np.ndarray:
        """Row-wise cumulative jump probabilities (zero rows for absorbing states)."""
        if "cdf" not in self._cache:
            r = self.rates.copy()
            np.fill_diagonal(r, 0.0)
            exit_ = r.sum(axis=1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                probs = np.where(exit_ > 0, r / exit_, 0.0)
            cdf = np.cumsum(probs, axis=1)
            cdf[exit_[:, 0] > 0, -1] = 1.0
            self._cache["cdf"] = cdf
        return self._cache["cdf"]

    def rate(self, src: Manifold, dst: Manifold) -> float:
        return float(self.rates[src, dst])

    def reachable(self, src: Manifold) -> set[Manifold]:
        """Manifolds reachable from ``src`` through nonzero-rate edges."""
        seen = {Manifold(src)}
        stack = [Manifold(src)]
        while stack:
            m = stack.pop()
            for n in Manifold:
                if n != m and self.rates[m, n] > 0 and n not in seen:
                    seen.add(n)
                    stack.append(n)
        return seen


def build_rate_model(config: LaserConfig, constants: AtomicConstants | None = None) -> RateModel:
    """Assemble the rate table for one laser configuration.

    Spontaneous channels (always present)::

        D5/2 -> F7/2           zeta / tau_D
        D5/2 -> D3/2(F=2)      A_M1
        D5/2 -> S(F=1)         (1 - zeta - A_M1 tau_D) / tau_D

    Laser-driven channels are added only when the beam is on.  The 935 nm
    repump returns D3/2 population to S(F=0) and S(F=1) in a 1:2 ratio,
    the 861 nm repump empties D3/2(F=2) into S(F=1) only.
    """
    if constants is None:
        constants = AtomicConstants()
    config.validate()
    constants.validate()

    M = Manifold
    r = np.zeros((N_MANIFOLDS, N_MANIFOLDS))
    tau = constants.tau_D

    r[M.D52, M.F72] = constants.zeta / tau
    if constants.A_M1 > 0:
        r[M.D52, M.D32_F2] = constants.A_M1
    r[M.D52, M.S_F1] = (1.0 - constants.zeta - constants.m1_branching) / tau

    if config.on_411:
        r[M.S_F1, M.D52] += config.pump_rate_411
        r[M.D52, M.S_F1] += config.pump_rate_411
    if config.on_935:
        for d32 in (M.D32_F1, M.D32_F2):
            r[d32, M.S_F0] += config.repump_rate_935 / 3.0
            r[d32, M.S_F1] += 2.0 * config.repump_rate_935 / 3.0
    if config.on_861:
        r[M.D32_F2, M.S_F1] += config.repump_rate_861
    if config.on_deshelve_760:
        r[M.F72, M.D32_F1] += config.deshelve_rate_760
    if config.on_976:
        r[M.D52, M.S_F0] += config.repump_rate_976 / 3.0
        r[M.D52, M.S_F1] += 2.0 * config.repump_rate_976 / 3.0

    return RateModel(rates=r, config=config, constants=constants)


def slow_shelving_rate(model: RateModel) -> float:
    """Smallest decay rate of the driven S(F=1) <-> D5/2 subsystem."""
    idx = [Manifold.S_F1, Manifold.D52]
    q = model.generator[np.ix_(idx, idx)]
    return float(np.min(-np.linalg.eigvals(q).real))
