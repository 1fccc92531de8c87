"""Experiment sequences built from dynamics and detection phases.

A SPAM shot runs: Doppler check -> prepare |0> -> optional pi pulse ->
shelve -> detect -> deshelve -> Doppler check.  Shots are simulated as numpy
batches; every shot draws from its own counter streams keyed by
``seed + shot_index``, so results are independent of batching and threading.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .analysis import BinomialEstimate, ScanPoint, wilson_interval
from .atomic import (
    FLUORESCING,
    REPUMP_SCHEMES,
    AtomicConstants,
    ConfigError,
    LaserConfig,
    Manifold,
    build_rate_model,
    deshelving_config,
    detection_config,
    shelving_config,
)
from .dynamics import simulate_batch
from .photons import (
    CountModel,
    Thresholds,
    choose_detection_threshold,
    choose_doppler_threshold,
    draw_counts_batch,
    poisson_from_uniform,
)

MAX_ATTEMPTS = 64
ZERO, ONE = "zero", "one"

# Draw slots on each shot's "misc" stream.
_STORAGE, _STORAGE_TIME, _PREP, _PI, _PRE_COUNTS, _DETECT_COUNTS, _POST_COUNTS = range(7)


@dataclass(frozen=True)
class ProtocolParams:
    eps_prep0: float = 2e-6
    eps_pi: float = 7.4e-5
    shelve_time: float = 0.200
    detect_time: float = 17e-3
    deshelve_time: float = 35e-3
    p_storage: float = 2.9e-4
    block_size: int = 50
    repump_scheme: str = "nm935"

    def __post_init__(self):
        for name in ("eps_prep0", "eps_pi", "p_storage"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        for name in ("shelve_time", "deshelve_time"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.detect_time > 0:
            raise ConfigError("detect_time must be > 0")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if self.repump_scheme not in REPUMP_SCHEMES:
            raise ConfigError(f"repump_scheme must be one of {REPUMP_SCHEMES}")


@dataclass(frozen=True)
class ShotRecord:
    shot: int
    prepared: str
    pre_doppler_counts: int
    detect_counts: int
    post_doppler_counts: int
    storage_flagged: bool
    restarted: bool
    classified: str
    final: str
    attempts: int = 1
    storage_lost: bool = False

    @property
    def error(self) -> bool:
        return self.prepared != self.classified

    def to_dict(self) -> dict:
        return asdict(self)


def interleaved_order(n_per_state: int, block_size: int, seed: int) -> np.ndarray:
    """Prepared state (0/1) of every shot, in blocks alternating between states."""
    first = int(rng.mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)) & np.uint64(1))
    order = []
    for start in range(0, n_per_state, block_size):
        size = min(block_size, n_per_state - start)
        order += [first] * size + [1 - first] * size
    return np.array(order, dtype=np.int8)


@dataclass
class _Models:
    shelve: object
    detect: object
    deshelve: object

    @classmethod
    def build(cls, lasers, constants, scheme):
        return cls(build_rate_model(shelving_config(lasers, scheme), constants),
                   build_rate_model(detection_config(lasers), constants),
                   build_rate_model(deshelving_config(lasers), constants))


def _phase_keys(seed, shots, attempts, namespace, phase):
    keys = np.empty(shots.size, dtype=np.uint64)
    for a in np.unique(attempts):
        sel = attempts == a
        keys[sel] = rng.shot_keys(seed, shots[sel], f"{namespace}/{phase}/{a}")
    return keys


def _simulate_attempt(prepared, shots, attempts, params, counts, models, seed, namespace,
                      doppler_cutoff):
    """One attempt for each listed shot; returns a dict of per-shot arrays."""
    n = shots.size
    misc = _phase_keys(seed, shots, attempts, namespace, "misc")

    def draw(slot):
        return rng.uniform(misc, np.full(n, slot, dtype=np.uint64))

    td = counts.doppler_window
    t_shelve0 = td
    t_det0 = t_shelve0 + params.shelve_time
    t_des0 = t_det0 + params.detect_time
    t_post0 = t_des0 + params.deshelve_time
    t_total = t_post0 + td

    lost = draw(_STORAGE) < params.p_storage
    t_fail = np.where(lost, draw(_STORAGE_TIME) * t_total, np.inf)

    pre_mean = counts.doppler_rate * np.minimum(t_fail, td) + counts.dark_rate * td
    pre = poisson_from_uniform(draw(_PRE_COUNTS), pre_mean)
    restart = pre < doppler_cutoff

    state = np.where(draw(_PREP) < params.eps_prep0, Manifold.S_F1, Manifold.S_F0).astype(np.int64)
    flip = (prepared == 1) & (draw(_PI) >= params.eps_pi)
    state = np.where(flip & (state == Manifold.S_F0), Manifold.S_F1,
                     np.where(flip & (state == Manifold.S_F1), Manifold.S_F0, state))

    res = simulate_batch(state, models.shelve, params.shelve_time,
                         _phase_keys(seed, shots, attempts, namespace, "shelve"))
    state = np.where(t_fail < t_det0, Manifold.LOST, res.final)

    res = simulate_batch(state, models.detect, params.detect_time,
                         _phase_keys(seed, shots, attempts, namespace, "detect"),
                         bright_until=np.clip(t_fail - t_det0, 0.0, None))
    det_mean = counts.bright_rate * res.bright_time + counts.dark_rate * params.detect_time
    detect = poisson_from_uniform(draw(_DETECT_COUNTS), det_mean)
    state = np.where(t_fail < t_des0, Manifold.LOST, res.final)

    res = simulate_batch(state, models.deshelve, params.deshelve_time,
                         _phase_keys(seed, shots, attempts, namespace, "deshelve"))
    state = np.where(t_fail < t_post0, Manifold.LOST, res.final)

    glowing = np.isin(state, [int(m) for m in FLUORESCING])
    post_bright = np.where(glowing, np.clip(t_fail - t_post0, 0.0, td), 0.0)
    post = poisson_from_uniform(draw(_POST_COUNTS),
                                counts.doppler_rate * post_bright + counts.dark_rate * td)
    return dict(pre=pre, detect=detect, post=post, restart=restart, final=state, lost=lost)


def _simulate_shots(prepared, shots, params, counts, models, seed, namespace, doppler_cutoff):
    n = shots.size
    attempts = np.zeros(n, dtype=np.int64)
    out = None
    todo = np.arange(n)
    while todo.size:
        r = _simulate_attempt(prepared[todo], shots[todo], attempts[todo], params, counts,
                              models, seed, namespace, doppler_cutoff)
        if out is None:
            out = {k: v.copy() for k, v in r.items()}
        else:
            for k, v in r.items():
                out[k][todo] = v
        again = r["restart"]
        todo = todo[again]
        attempts[todo] += 1
        if todo.size and attempts.max() >= MAX_ATTEMPTS:
            raise RuntimeError("Doppler pre-check keeps failing; check doppler cutoff and rates")
    out["attempts"] = attempts + 1
    return out


def _check_blinding(thresholds: Thresholds, seed: int, namespace: str):
    prov = thresholds.provenance or {}
    if prov.get("namespace") == namespace and prov.get("seed") == seed:
        raise ValueError(
            "thresholds were calibrated on the same shots as this campaign; "
            "calibration data cannot be reused in the final estimate"
        )


def run_spam_campaign(params: ProtocolParams, counts_model: CountModel,
                      constants: AtomicConstants, n_per_state: int, rng_seed: int,
                      thresholds: Thresholds, lasers: LaserConfig | None = None,
                      threads: int = 1, namespace: str = "final",
                      chunk_size: int = 20_000) -> list[ShotRecord]:
    """Simulate interleaved |0>/|1> SPAM attempts.

    Exactly ``n_per_state`` shots of each state are recorded; attempts that
    fail the Doppler pre-check are redone and only counted in ``attempts``.
    """
    if n_per_state < 1:
        raise ValueError("n_per_state must be >= 1")
    lasers = lasers or LaserConfig()
    models = _Models.build(lasers, constants, params.repump_scheme)
    _check_blinding(thresholds, rng_seed, namespace)

    prepared = interleaved_order(n_per_state, params.block_size, rng_seed)
    shots = np.arange(prepared.size, dtype=np.int64)
    chunks = [slice(i, i + chunk_size) for i in range(0, shots.size, chunk_size)]

    def run(sl):
        return _simulate_shots(prepared[sl], shots[sl], params, counts_model, models,
                               rng_seed, namespace, thresholds.doppler_cutoff)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    cols = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}

    bright = cols["detect"] >= thresholds.detect_cutoff
    flagged = cols["post"] < thresholds.doppler_cutoff
    names = [m.name for m in Manifold]
    return [
        ShotRecord(
            shot=int(i),
            prepared=ONE if prepared[i] else ZERO,
            pre_doppler_counts=int(cols["pre"][i]),
            detect_counts=int(cols["detect"][i]),
            post_doppler_counts=int(cols["post"][i]),
            storage_flagged=bool(flagged[i]),
            restarted=bool(cols["attempts"][i] > 1),
            classified=ZERO if bright[i] else ONE,
            final=names[int(cols["final"][i])],
            attempts=int(cols["attempts"][i]),
            storage_lost=bool(cols["lost"][i]),
        )
        for i in range(shots.size)
    ]


def calibrate_thresholds(params: ProtocolParams, counts_model: CountModel,
                         constants: AtomicConstants, rng_seed: int,
                         n_per_state: int = 10_000, lasers: LaserConfig | None = None,
                         detect_bound: float = 1e-7, doppler_bound: float = 1e-6,
                         threads: int = 1) -> Thresholds:
    """Fix thresholds from a separate calibration run, before any final data exist.

    The detection cutoff uses the mean of the |1> detection counts, the
    Doppler cutoff the mean Doppler count.
    """
    provisional = Thresholds(detect_cutoff=1, doppler_cutoff=0,
                             provenance={"namespace": "provisional"})
    records = run_spam_campaign(params, counts_model, constants, n_per_state, rng_seed,
                                provisional, lasers=lasers, threads=threads,
                                namespace="calibration")
    dark_mean = float(np.mean([r.detect_counts for r in records if r.prepared == ONE]))
    cooling_mean = float(np.mean([r.pre_doppler_counts for r in records]))
    return Thresholds(
        detect_cutoff=choose_detection_threshold(dark_mean, detect_bound),
        doppler_cutoff=choose_doppler_threshold(cooling_mean, doppler_bound),
        detect_error_bound=detect_bound,
        doppler_error_bound=doppler_bound,
        provenance={"namespace": "calibration", "seed": int(rng_seed),
                    "n_per_state": int(n_per_state), "one_state_mean": dark_mean,
                    "doppler_mean": cooling_mean},
    )


@dataclass
class StateSummary:
    n: int
    flagged: int
    errors_unflagged: int
    errors_flagged: int
    restarts: int
    storage_lost: int

    @property
    def unflagged(self) -> int:
        return self.n - self.flagged

    @property
    def inaccuracy(self) -> BinomialEstimate:
        return wilson_interval(self.errors_unflagged, max(self.unflagged, 1))

    @property
    def infidelity(self) -> BinomialEstimate:
        return wilson_interval(self.errors_unflagged + self.flagged, self.n)


@dataclass
class CampaignSummary:
    zero: StateSummary
    one: StateSummary

    @property
    def inaccuracy(self) -> BinomialEstimate:
        k = self.zero.errors_unflagged + self.one.errors_unflagged
        return wilson_interval(k, max(self.zero.unflagged + self.one.unflagged, 1))

    @property
    def infidelity(self) -> BinomialEstimate:
        k = (self.zero.errors_unflagged + self.zero.flagged
             + self.one.errors_unflagged + self.one.flagged)
        return wilson_interval(k, self.zero.n + self.one.n)

    def to_dict(self) -> dict:
        def est(e):
            return {"k": e.k, "n": e.n, "p_hat": e.p_hat, "ci_low": e.ci_low,
                    "ci_high": e.ci_high, "z": e.z}

        out = {}
        for label, s in (("zero", self.zero), ("one", self.one)):
            out[label] = dict(asdict(s), unflagged=s.unflagged,
                              inaccuracy=est(s.inaccuracy), infidelity=est(s.infidelity))
        out["average_inaccuracy"] = est(self.inaccuracy)
        out["average_infidelity"] = est(self.infidelity)
        return out


def summarize_campaign(records) -> CampaignSummary:
    """Inaccuracy excludes flagged shots; infidelity counts every flagged shot as failed."""
    def tally(label):
        rs = [r for r in records if r.prepared == label]
        return StateSummary(
            n=len(rs),
            flagged=sum(r.storage_flagged for r in rs),
            errors_unflagged=sum(r.error and not r.storage_flagged for r in rs),
            errors_flagged=sum(r.error and r.storage_flagged for r in rs),
            restarts=sum(r.attempts - 1 for r in rs),
            storage_lost=sum(r.storage_lost for r in rs),
        )

    return CampaignSummary(zero=tally(ZERO), one=tally(ONE))


# --------------------------------------------------------------- shelving scan

def run_shelving_scan(times, repump_scheme: str, n_per_point: int, seed: int,
                      constants: AtomicConstants | None = None,
                      counts_model: CountModel | None = None,
                      lasers: LaserConfig | None = None,
                      detect_cutoff: int | None = None) -> list[ScanPoint]:
    """Unshelved fraction versus 411 nm illumination time for an S(F=1) ion.

    Preparation of the full F=1 manifold is taken as exact.  Each point is
    shelve -> detect -> threshold, with the detection cutoff defaulting to the
    1e-7 background-tail rule.
    """
    constants = constants or AtomicConstants()
    counts_model = counts_model or CountModel()
    lasers = lasers or LaserConfig()
    models = _Models.build(lasers, constants, repump_scheme)
    if detect_cutoff is None:
        detect_cutoff = choose_detection_threshold(counts_model.dark_mean, 1e-7)
    window = counts_model.detect_window
    shots = np.arange(n_per_point)
    points = []
    for t in times:
        t = float(t)
        tag = f"scan/{repump_scheme}/{t!r}"
        res = simulate_batch(np.full(n_per_point, int(Manifold.S_F1)), models.shelve, t,
                             rng.shot_keys(seed, shots, tag + "/shelve"))
        res = simulate_batch(res.final, models.detect, window,
                             rng.shot_keys(seed, shots, tag + "/detect"))
        mean = counts_model.bright_rate * res.bright_time + counts_model.dark_rate * window
        counts = draw_counts_batch(mean, rng.shot_keys(seed, shots, tag + "/counts"))
        points.append(ScanPoint(t, int(np.sum(counts >= detect_cutoff)), n_per_point))
    return points


# --------------------------------------------------------- microwave rotations

def _compose_spam(p_one, eps_zero: float, eps_one: float):
    """P(read "one") given true P(|1>) and readout errors of each state."""
    return p_one * (1.0 - eps_one) + (1.0 - p_one) * eps_zero


def _maybe_sample(p, n_shots, seed):
    if n_shots is None:
        return p
    gen = np.random.default_rng(seed)
    return gen.binomial(n_shots, p) / n_shots


def simulate_rabi(t_list, t_pi: float, eps_zero: float = 0.0, eps_one: float = 0.0,
                  n_shots: int | None = None, seed: int = 0):
    """Resonant Rabi flopping read out through the SPAM error channel.

    ``eps_zero`` is P(read one | |0>), ``eps_one`` is P(read zero | |1>).
    With ``n_shots`` the returned values are sampled frequencies.
    """
    t = np.asarray(t_list, dtype=float)
    p1 = np.sin(np.pi * t / (2.0 * t_pi)) ** 2
    return _maybe_sample(_compose_spam(p1, eps_zero, eps_one), n_shots, seed)


def simulate_ramsey(delay, detuning: float, eps_zero: float = 0.0, eps_one: float = 0.0,
                    n_shots: int | None = None, seed: int = 0):
    """Ramsey fringe (1 + cos(2 pi detuning delay)) / 2 through the SPAM channel."""
    p1 = 0.5 * (1.0 + np.cos(2.0 * np.pi * detuning * np.asarray(delay, dtype=float)))
    return _maybe_sample(_compose_spam(p1, eps_zero, eps_one), n_shots, seed)


# --------------------------------------------------- randomized benchmarking

def _rotation_matrices():
    rx = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]])
    rz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]])
    group = [np.eye(3, dtype=int)]
    frontier = list(group)
    while frontier:
        nxt = []
        for g in frontier:
            for h in (rx, rz):
                m = h @ g
                if not any((m == e).all() for e in group):
                    group.append(m)
                    nxt.append(m)
        frontier = nxt
    return group


def _clifford_tables():
    mats = _rotation_matrices()
    assert len(mats) == 24
    index = {m.tobytes(): i for i, m in enumerate(mats)}
    perm = np.array([[int(np.flatnonzero(m[:, a])[0]) for a in range(3)] for m in mats])
    sign = np.array([[int(m[perm[i, a], a]) for a in range(3)] for i, m in enumerate(mats)])
    compose = np.array([[index[(mats[a] @ mats[b]).tobytes()] for b in range(24)]
                        for a in range(24)])
    inverse = np.array([index[m.T.copy().tobytes()] for m in mats])
    return perm, sign, compose, inverse


CLIFFORD_PERM, CLIFFORD_SIGN, CLIFFORD_COMPOSE, CLIFFORD_INVERSE = _clifford_tables()


@dataclass
class RBResult:
    lengths: list[int]
    survival: list[float]
    trials: list[int]
    per_sequence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lengths": self.lengths, "survival": self.survival, "trials": self.trials}


def run_randomized_benchmarking(seq_lengths, n_seqs: int, eps_per_gate: float, seed: int,
                                n_shots: int = 100, eps_zero: float = 0.0,
                                eps_one: float = 0.0) -> RBResult:
    """Single-qubit Clifford RB with depolarizing gate noise.

    Each of ``m`` random Cliffords and the final inverting gate is followed by
    a uniformly random Pauli error with probability ``3 eps / 2``, which is
    the depolarizing channel of average infidelity ``eps``.  The qubit is
    tracked as a signed Bloch axis; survival is P(read |0>).
    """
    lengths = [int(m) for m in seq_lengths]
    if len(set(lengths)) < 2:
        raise ValueError("need at least two distinct sequence lengths")
    if min(lengths) < 1 or n_seqs < 1 or n_shots < 1:
        raise ValueError("lengths, n_seqs and n_shots must be positive")
    q = 1.5 * eps_per_gate
    if not 0 <= q <= 1:
        raise ValueError("eps_per_gate out of range")
    gen = np.random.default_rng(seed)
    survival, trials, per_seq = [], [], {}
    for m in lengths:
        gates = gen.integers(0, 24, size=(n_seqs, m))
        total = np.zeros(n_seqs, dtype=np.int64)
        for j in range(m):
            total = CLIFFORD_COMPOSE[gates[:, j], total]
        seq = np.concatenate([gates, CLIFFORD_INVERSE[total][:, None]], axis=1)
        seq = np.repeat(seq, n_shots, axis=0)
        axis = np.full(seq.shape[0], 2, dtype=np.int64)
        sign = np.ones(seq.shape[0], dtype=np.int64)
        for j in range(m + 1):
            g = seq[:, j]
            sign *= CLIFFORD_SIGN[g, axis]
            axis = CLIFFORD_PERM[g, axis]
            if q > 0:
                hit = gen.random(seq.shape[0]) < q
                if hit.any():
                    pauli = gen.integers(0, 3, size=int(hit.sum()))
                    h = np.flatnonzero(hit)
                    sign[h] *= np.where(axis[h] == pauli, 1, -1)
        assert np.all(axis == 2)
        u = gen.random(seq.shape[0])
        read_zero = np.where(sign > 0, u >= eps_zero, u < eps_one)
        per_seq[m] = read_zero.reshape(n_seqs, n_shots).mean(axis=1)
        survival.append(float(read_zero.mean()))
        trials.append(int(read_zero.size))
    return RBResult(lengths=lengths, survival=survival, trials=trials, per_sequence=per_seq)


# ----------------------------------------------------- two-ion discrimination

def optimal_two_ion_threshold(single_mean: float, dark_mean: float = 0.0) -> tuple[int, float]:
    """Cutoff separating one from two bright ions, and its mean error rate.

    Minimizes ``(P(X1 >= c) + P(X2 < c)) / 2`` with X1 ~ Poisson(single + dark)
    and X2 ~ Poisson(2 single + dark).
    """
    from scipy import stats

    lam1, lam2 = single_mean + dark_mean, 2 * single_mean + dark_mean
    cs = np.arange(1, int(lam2 + 10 * math.sqrt(lam2) + 10))
    err = 0.5 * stats.poisson.sf(cs - 1, lam1) + 0.5 * stats.poisson.cdf(cs - 1, lam2)
    i = int(np.argmin(err))
    return int(cs[i]), float(err[i])


@dataclass
class TwoIonResult:
    detection_bins: int
    vetoed: int
    evaluated: int
    misclassified: int
    misclassified_without_veto: int
    corrupted: int
    corrupted_vetoed: int
    threshold: int
    check_cutoff: int
    predicted_error: float

    @property
    def error_rate(self) -> float:
        return self.misclassified / max(self.evaluated, 1)

    def to_dict(self) -> dict:
        return dict(asdict(self), error_rate=self.error_rate)


def run_two_ion_discrimination(n_cycles: int, counts_model: CountModel | None = None,
                               seed: int = 0, p_one_shelved: float = 0.5,
                               storage_rate_per_bin: float = 0.0,
                               storage_mean_bins: float = 3.0,
                               injected_storage=(), check_bound: float = 1e-6,
                               threshold: int | None = None) -> TwoIonResult:
    """Two-ion S/F discrimination with interleaved check bins.

    Bins are numbered from 1; even bins are detection bins (one ion shelved
    with probability ``p_one_shelved``), odd bins are checks taken with both
    ions returned to the cooling cycle.  A detection bin is vetoed when the
    check on either side falls below the two-ion Doppler cutoff.  Storage
    events darken one ion over ``[start, start + duration)`` in bin units
    measured from the start of the run, so bin number ``b`` spans
    ``[b - 1, b)``; ``injected_storage`` adds explicit ``(start, duration)``
    events.
    """
    counts_model = counts_model or CountModel.two_ion_default()
    w = counts_model.bin_width
    single = counts_model.bright_rate * w
    dark = counts_model.dark_rate * w
    if threshold is None:
        threshold, predicted = optimal_two_ion_threshold(single, dark)
    else:
        from scipy import stats
        predicted = 0.5 * (stats.poisson.sf(threshold - 1, single + dark)
                           + stats.poisson.cdf(threshold - 1, 2 * single + dark))
    check_cutoff = choose_doppler_threshold(2 * single + dark, check_bound)

    gen = np.random.default_rng(seed)
    n_bins = 2 * n_cycles + 1
    number = np.arange(1, n_bins + 1)
    detection = number % 2 == 0
    shelved = np.zeros(n_bins, dtype=np.int64)
    shelved[detection] = gen.random(n_cycles) < p_one_shelved
    ion_time = (2 - shelved) * w

    events = [tuple(e) for e in injected_storage]
    if storage_rate_per_bin > 0:
        k = gen.poisson(storage_rate_per_bin * n_bins)
        starts = gen.random(k) * n_bins
        durs = gen.exponential(storage_mean_bins, k)
        events += list(zip(starts, durs))
    dark_time = np.zeros(n_bins)
    for start, dur in events:
        lo, hi = float(start), float(start) + float(dur)
        first, last = int(math.floor(lo)), min(int(math.ceil(hi)), n_bins)
        for b in range(max(first, 0), last):
            dark_time[b] += max(0.0, min(hi, b + 1) - max(lo, b)) * w
    ion_time = np.clip(ion_time - np.minimum(dark_time, w), 0.0, None)
    corrupted = dark_time > 0

    counts = gen.poisson(counts_model.bright_rate * ion_time + dark)
    det_idx = np.flatnonzero(detection)
    ok_before = counts[det_idx - 1] >= check_cutoff
    ok_after = counts[det_idx + 1] >= check_cutoff
    keep = ok_before & ok_after
    read_two = counts[det_idx] >= threshold
    truth_two = shelved[det_idx] == 0
    wrong = read_two != truth_two
    return TwoIonResult(
        detection_bins=int(det_idx.size),
        vetoed=int((~keep).sum()),
        evaluated=int(keep.sum()),
        misclassified=int((wrong & keep).sum()),
        misclassified_without_veto=int(wrong.sum()),
        corrupted=int(corrupted[det_idx].sum()),
        corrupted_vetoed=int((corrupted[det_idx] & ~keep).sum()),
        threshold=int(threshold),
        check_cutoff=int(check_cutoff),
        predicted_error=float(predicted),
    )
