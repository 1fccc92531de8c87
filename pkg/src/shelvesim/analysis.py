"""Statistical estimation and reporting for SPAM experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .atomic import AtomicConstants
from .dynamics import finite_time_shelving_error

ONE_SIGMA_DELTA = 0.5
# Two-sided 95% profile-likelihood interval.
NINETY_FIVE_DELTA = 0.5 * stats.chi2.ppf(0.95, 1)
# Above this many trials per sample the two-sample test uses the normal approximation.
EXACT_TEST_MAX_N = 1000
# A scan point carries A_M1 information once t * zeta / (2 tau_D) exceeds this.
ASYMPTOTIC_EXPONENT = 10.0


class NotIdentifiableError(ValueError):
    pass


@dataclass(frozen=True)
class BinomialEstimate:
    k: int
    n: int
    p_hat: float
    ci_low: float
    ci_high: float
    z: float = 1.0

    @property
    def center(self) -> float:
        return 0.5 * (self.ci_low + self.ci_high)

    def as_db(self) -> tuple[float, float, float]:
        return to_decibels(self.p_hat), to_decibels(self.ci_low), to_decibels(self.ci_high)


def wilson_interval(k: int, n: int, z: float = 1.0) -> BinomialEstimate:
    """Wilson score interval for k successes in n trials at ``z`` sigma."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    if not z > 0:
        raise ValueError("z must be positive")
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    low = 0.0 if k == 0 else max(0.0, center - half)
    high = 1.0 if k == n else min(1.0, center + half)
    return BinomialEstimate(k=k, n=n, p_hat=p, ci_low=low, ci_high=high, z=z)


def to_decibels(p):
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(p)
    return float(out) if np.ndim(out) == 0 else out


def from_decibels(db):
    out = np.power(10.0, np.asarray(db, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- error budget

APPLIES = ("both", "zero_only", "one_only")


@dataclass(frozen=True)
class BudgetRow:
    """One predicted error contribution (probability).

    ``err_low``/``err_high`` are one-sigma widths of a two-piece normal.
    ``flagged_storage`` rows count toward infidelity only.
    """

    name: str
    value: float
    applies: str
    err_low: float = 0.0
    err_high: float = 0.0
    flagged_storage: bool = False

    def __post_init__(self):
        if self.applies not in APPLIES:
            raise ValueError(f"applies must be one of {APPLIES}")
        if self.err_low < 0 or self.err_high < 0:
            raise ValueError("uncertainties must be non-negative")

    @property
    def expectation(self) -> float:
        # Mean of a two-piece normal with mode ``value``.
        return self.value + math.sqrt(2.0 / math.pi) * (self.err_high - self.err_low)

    def scaled(self, c: float) -> "BudgetRow":
        return BudgetRow(self.name, self.value * c, self.applies, self.err_low * c,
                         self.err_high * c, self.flagged_storage)


@dataclass
class ErrorBudget:
    rows: list[BudgetRow]
    predicted_avg_inaccuracy: float
    predicted_avg_infidelity: float
    inaccuracy_interval: tuple[float, float]
    infidelity_interval: tuple[float, float]
    point_avg_inaccuracy: float
    point_avg_infidelity: float

    def to_dict(self) -> dict:
        return {
            "rows": [vars(r) | {"expectation": r.expectation} for r in self.rows],
            "predicted_avg_inaccuracy": self.predicted_avg_inaccuracy,
            "predicted_avg_infidelity": self.predicted_avg_infidelity,
            "inaccuracy_interval": list(self.inaccuracy_interval),
            "infidelity_interval": list(self.infidelity_interval),
            "point_avg_inaccuracy": self.point_avg_inaccuracy,
            "point_avg_infidelity": self.point_avg_infidelity,
        }

    def table(self, unit: float = 1e-4) -> str:
        """Plain-text table laid out by state column, values in ``unit``."""
        width = max([len(r.name) for r in self.rows] + [30])

        def fmt(r):
            s = f"{r.value / unit:.2f}"
            if r.err_low or r.err_high:
                s += f" +{r.err_high / unit:.2f}/-{r.err_low / unit:.2f}"
            return s

        lines = [f"{'Error source':<{width}}  {'|1> state':>20}  {'|0> state':>20}",
                 "-" * (width + 44)]
        for r in (r for r in self.rows if not r.flagged_storage):
            one = fmt(r) if r.applies in ("both", "one_only") else "---"
            zero = fmt(r) if r.applies in ("both", "zero_only") else "---"
            lines.append(f"{r.name:<{width}}  {one:>20}  {zero:>20}")
        lo, hi = self.inaccuracy_interval
        lines.append(f"{'Predicted average inaccuracy':<{width}}  "
                     f"{self.predicted_avg_inaccuracy / unit:>20.2f}  "
                     f"[{lo / unit:.2f}, {hi / unit:.2f}]")
        for r in (r for r in self.rows if r.flagged_storage):
            one = fmt(r) if r.applies in ("both", "one_only") else "---"
            zero = fmt(r) if r.applies in ("both", "zero_only") else "---"
            lines.append(f"{r.name:<{width}}  {one:>20}  {zero:>20}")
        lo, hi = self.infidelity_interval
        lines.append(f"{'Predicted average infidelity':<{width}}  "
                     f"{self.predicted_avg_infidelity / unit:>20.2f}  "
                     f"[{lo / unit:.2f}, {hi / unit:.2f}]")
        lines.append(f"(values in units of {unit:g})")
        return "\n".join(lines) + "\n"


def _state_average(rows, attr) -> float:
    total = 0.0
    for r in rows:
        v = getattr(r, attr)
        total += 2.0 * v if r.applies == "both" else v
    return total / 2.0


def _sample_rows(rows, n, seed):
    gen = np.random.default_rng(seed)
    out = np.zeros(n)
    for r in rows:
        z = gen.standard_normal(n)
        draw = r.value + np.where(z < 0, r.err_low, r.err_high) * z
        out += (2.0 if r.applies == "both" else 1.0) * draw
    return out / 2.0


def assemble_budget(components, n_samples: int = 200_000, seed: int = 0) -> ErrorBudget:
    """Combine per-channel contributions into average inaccuracy and infidelity.

    Average inaccuracy is ``(sum(one_only) + sum(zero_only) + 2 sum(both)) / 2``
    over non-storage rows.  Infidelity adds the flagged-storage rows.  The
    headline numbers use each row's expectation, so asymmetric uncertainties
    shift them; the plain sum of modes is kept as ``point_*``.  Intervals
    are the 16th/84th percentiles of a fixed-seed Monte Carlo draw.
    """
    rows = [c if isinstance(c, BudgetRow) else BudgetRow(**c) for c in components]
    accuracy_rows = [r for r in rows if not r.flagged_storage]
    inacc = _state_average(accuracy_rows, "expectation")
    infid = _state_average(rows, "expectation")

    def interval(subset):
        if not any(r.err_low or r.err_high for r in subset):
            v = _state_average(subset, "value")
            return (v, v)
        s = _sample_rows(subset, n_samples, seed)
        return tuple(float(x) for x in np.percentile(s, [15.865, 84.135]))

    return ErrorBudget(
        rows=rows,
        predicted_avg_inaccuracy=inacc,
        predicted_avg_infidelity=infid,
        inaccuracy_interval=interval(accuracy_rows),
        infidelity_interval=interval(rows),
        point_avg_inaccuracy=_state_average(accuracy_rows, "value"),
        point_avg_infidelity=_state_average(rows, "value"),
    )


def reference_budget_rows() -> list[BudgetRow]:
    """Reference budget contributions for the Yb+ shelving experiment."""
    u = 1e-4
    return [
        BudgetRow("|0> state preparation", 0.02 * u, "both"),
        BudgetRow("Unflagged storage error", 0.1 * u, "zero_only", 0.06 * u, 0.2 * u),
        BudgetRow("|0> -> |1> transfer", 0.74 * u, "one_only", 0.10 * u, 0.10 * u),
        BudgetRow("Finite shelving time", 0.06 * u, "one_only", 0.03 * u, 0.03 * u),
        BudgetRow("M1 decay", 0.82 * u, "one_only", 0.03 * u, 0.03 * u),
        BudgetRow("Flagged storage error", 2.9 * u, "zero_only", 0.5 * u, 0.6 * u,
                  flagged_storage=True),
    ]


# ------------------------------------------------------------------ A_M1 fit

@dataclass(frozen=True)
class ScanPoint:
    time: float
    errors: int
    trials: int


@dataclass
class RateEstimate:
    """M1 rate estimate (rad/s) with profile-likelihood and total intervals."""

    value: float
    ci_low: float
    ci_high: float
    total_low: float
    total_high: float
    delta_loglik: float
    upper_limit_only: bool = False
    loglik_max: float = 0.0
    extra: dict = field(default_factory=dict)

    def in_mhz(self) -> tuple[float, float, float]:
        f = 1e3 / (2 * math.pi)
        return self.value * f, self.ci_low * f, self.ci_high * f

    def to_dict(self) -> dict:
        v, lo, hi = self.in_mhz()
        return {
            "A_M1_rad_s": self.value, "ci_low_rad_s": self.ci_low, "ci_high_rad_s": self.ci_high,
            "total_low_rad_s": self.total_low, "total_high_rad_s": self.total_high,
            "A_M1_mHz_over_2pi": v, "ci_low_mHz": lo, "ci_high_mHz": hi,
            "delta_loglik": self.delta_loglik, "upper_limit_only": self.upper_limit_only,
        }


def _as_points(scan) -> list[ScanPoint]:
    pts = []
    for p in scan:
        if isinstance(p, ScanPoint):
            pts.append(p)
        elif isinstance(p, dict):
            pts.append(ScanPoint(float(p["time"]), int(p["errors"]), int(p["trials"])))
        else:
            t, k, n = p
            pts.append(ScanPoint(float(t), int(k), int(n)))
    return pts


def shelving_loglik(a_m1, points, constants: AtomicConstants) -> float:
    """Binomial log-likelihood of scan counts under the closed-form shelving error."""
    offset = constants.tau_D / (3.0 * constants.zeta)
    ll = 0.0
    for p in points:
        eps = offset * a_m1 + float(finite_time_shelving_error(p.time, constants))
        eps = min(max(eps, 1e-300), 1.0 - 1e-16)
        ll += p.errors * math.log(eps) + (p.trials - p.errors) * math.log1p(-eps)
    return ll


def fit_A_M1(scan, constants: AtomicConstants | None = None,
             delta_loglik: float = ONE_SIGMA_DELTA) -> RateEstimate:
    """Binomial maximum-likelihood fit of the M1 rate to a shelving-time scan.

    The interval is where the log-likelihood lies within ``delta_loglik`` of
    its maximum (0.5 for one sigma).  ``total_low``/``total_high`` also fold in
    the relative uncertainty of tau_D and zeta in quadrature, treating the
    estimate as scaling like zeta / tau_D.
    """
    c = constants or AtomicConstants()
    points = _as_points(scan)
    if not points:
        raise ValueError("empty scan")
    exponents = [p.time * c.zeta / (2 * c.tau_D) for p in points]
    if max(exponents) < ASYMPTOTIC_EXPONENT:
        raise NotIdentifiableError(
            "no scan point reaches the asymptotic regime; the M1 rate is not identifiable"
        )
    offset = c.tau_D / (3.0 * c.zeta)
    a_max = (1.0 - 1e-9) / offset
    nll = lambda a: -shelving_loglik(a, points, c)  # noqa: E731

    # Closed-form start from pooled asymptotic points.
    asym = [p for p, e in zip(points, exponents) if e >= ASYMPTOTIC_EXPONENT]
    k = sum(p.errors for p in asym)
    n = sum(p.trials for p in asym)
    resid = sum(p.trials * float(finite_time_shelving_error(p.time, c)) for p in asym)
    guess = max((k - resid) / n, 0.0) / offset

    hi = max(10 * guess, 1e-3)
    while nll(hi) < nll(guess) and hi < a_max:
        hi = min(hi * 10, a_max)
    res = optimize.minimize_scalar(nll, bounds=(0.0, hi), method="bounded",
                                   options={"xatol": 1e-12 * max(hi, 1.0)})
    a_hat = float(res.x)
    if nll(0.0) <= res.fun:
        a_hat = 0.0
    best = -nll(a_hat)

    def excess(a):
        return best - (-nll(a)) - delta_loglik

    if a_hat == 0.0 or excess(0.0) <= 0:
        low = 0.0
    else:
        low = optimize.brentq(excess, 0.0, a_hat, xtol=1e-14)
    upper = max(a_hat * 2, 1e-4)
    while excess(upper) < 0:
        upper *= 2
        if upper > a_max:
            raise NotIdentifiableError("likelihood too flat to bound the M1 rate")
    high = optimize.brentq(excess, a_hat, upper, xtol=1e-14)

    rel_sys = math.hypot(c.zeta_err / c.zeta, c.tau_D_err / c.tau_D)
    sys = a_hat * rel_sys
    total_low = max(a_hat - math.hypot(a_hat - low, sys), 0.0)
    total_high = a_hat + math.hypot(high - a_hat, sys)
    return RateEstimate(value=a_hat, ci_low=low, ci_high=high, total_low=total_low,
                        total_high=total_high, delta_loglik=delta_loglik,
                        upper_limit_only=k == 0, loglik_max=best,
                        extra={"relative_systematic": rel_sys})


def invert_single_point(error_rate: float, t: float, constants: AtomicConstants | None = None) -> float:
    """M1 rate reproducing ``error_rate`` at shelving time ``t`` (closed form)."""
    c = constants or AtomicConstants()
    resid = float(finite_time_shelving_error(t, c))
    return max(error_rate - resid, 0.0) * 3.0 * c.zeta / c.tau_D


def m1_branching_ratio(a_m1: float, constants: AtomicConstants | None = None) -> float:
    c = constants or AtomicConstants()
    return a_m1 * c.tau_D


# --------------------------------------------------------- significance test

def binomial_two_sample_test(k1: int, n1: int, k2: int, n2: int) -> float:
    """One-sided p-value for "sample 2 has a lower error rate than sample 1".

    Conditional exact (Fisher) test on the 2x2 table when both samples have
    at most ``EXACT_TEST_MAX_N`` trials, pooled two-proportion z-test above.
    """
    for k, n in ((k1, n1), (k2, n2)):
        if n < 1 or not 0 <= k <= n:
            raise ValueError("need n >= 1 and 0 <= k <= n")
    if max(n1, n2) <= EXACT_TEST_MAX_N:
        total = k1 + k2
        return float(stats.hypergeom.cdf(k2, n1 + n2, total, n2))
    pooled = (k1 + k2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        return 0.5
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    return float(stats.norm.sf((k1 / n1 - k2 / n2) / se))


# --------------------------------------------------------------- RB decay fit

@dataclass
class RBFit:
    eps: float
    eps_err: float
    p: float
    amplitude: float
    offset: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return dict(vars(self), eps_db=to_decibels(self.eps) if self.eps > 0 else None)


def fit_rb_decay(lengths, survival, trials=None, offset: float | None = 0.5) -> RBFit:
    """Least-squares fit of ``A p**m + B``; error per gate ``(1 - p) / 2``.

    With per-gate errors near 1e-4 the amplitude and offset are degenerate
    over practical lengths, so ``B`` is pinned to 1/2 (the fully depolarized
    single-qubit value) unless ``offset=None``.  ``trials`` enables binomial
    weighting.
    """
    m = np.asarray(lengths, dtype=float)
    y = np.asarray(survival, dtype=float)
    if len(set(m.tolist())) < 2:
        raise ValueError("need at least two distinct sequence lengths")
    sigma = None
    if trials is not None:
        n = np.asarray(trials, dtype=float)
        var = np.clip(y * (1 - y), 1.0 / n, None) / n
        sigma = np.sqrt(var)

    if np.ptp(y) == 0 and (offset is None or y[0] != offset):
        return RBFit(eps=0.0, eps_err=0.0, p=1.0, amplitude=float(y[0]) - (offset or 0.0),
                     offset=offset if offset is not None else 0.0, degenerate=True)

    a0 = max(float(y[np.argmin(m)]) - (offset if offset is not None else 0.5), 1e-6)
    if offset is None:
        f = lambda mm, a, p, b: a * p ** mm + b  # noqa: E731
        p0, bounds = [a0, 0.999, 0.5], ([-np.inf, 0.0, -np.inf], [np.inf, 1.0, np.inf])
    else:
        f = lambda mm, a, p: a * p ** mm + offset  # noqa: E731
        p0, bounds = [a0, 0.999], ([-np.inf, 0.0], [np.inf, 1.0])
    popt, pcov = optimize.curve_fit(f, m, y, p0=p0, sigma=sigma, absolute_sigma=sigma is not None,
                                    bounds=bounds, method="trf", xtol=1e-15, ftol=1e-15,
                                    gtol=1e-15, max_nfev=10_000)
    p = float(popt[1])
    p_err = float(np.sqrt(pcov[1, 1])) if np.all(np.isfinite(pcov)) else float("nan")
    return RBFit(eps=(1 - p) / 2, eps_err=p_err / 2, p=p, amplitude=float(popt[0]),
                 offset=float(popt[2]) if offset is None else offset, degenerate=p >= 1.0)
