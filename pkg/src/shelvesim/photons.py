"""Photon counting, histograms and count thresholds."""
from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import rng
from .atomic import FLUORESCING, Manifold

TIMETAG_RESOLUTION_NS = 10


class ThresholdError(ValueError):
    pass


class Readout(str, enum.Enum):
    S_MANIFOLD = "S_manifold"
    F_MANIFOLD = "F_manifold"


@dataclass(frozen=True)
class CountModel:
    """Photon count rates (1/s) and windows (s).

    Defaults give a mean of 60 counts for a fluorescing ion and 0.1
    background counts in the 17 ms detection window, and 100 counts in a
    10 ms Doppler-cooling check.
    """

    bright_rate: float = 60.0 / 17e-3
    dark_rate: float = 0.1 / 17e-3
    detect_window: float = 17e-3
    bin_width: float = 10e-3
    efficiency: float = 0.0016
    doppler_rate: float = 1.0e4
    doppler_window: float = 10e-3

    def __post_init__(self):
        for name in ("bright_rate", "dark_rate", "doppler_rate", "efficiency"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("detect_window", "bin_width", "doppler_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def two_ion_default(cls) -> "CountModel":
        """Count model for the two-ion S/F discrimination run (200 counts per ion per bin)."""
        return cls(bright_rate=2.0e4, dark_rate=20.0)

    @property
    def dark_mean(self) -> float:
        return self.dark_rate * self.detect_window

    @property
    def bright_mean(self) -> float:
        return (self.bright_rate + self.dark_rate) * self.detect_window

    @property
    def doppler_mean(self) -> float:
        return (self.doppler_rate + self.dark_rate) * self.doppler_window


def poisson_from_uniform(u, mean) -> np.ndarray:
    """Inverse-CDF Poisson variates; ``u`` must lie strictly inside (0, 1)."""
    mean = np.asarray(mean, dtype=float)
    out = stats.poisson.ppf(u, np.where(mean > 0, mean, 1.0))
    return np.where(mean > 0, out, 0).astype(np.int64)


def draw_counts(final: Manifold, model: CountModel, window: float, rng_seed: int,
                purpose: str = "counts") -> int:
    if not window > 0:
        raise ValueError("window must be positive")
    mean = model.dark_rate * window
    if Manifold(final) in FLUORESCING:
        mean += model.bright_rate * window
    u = rng.Stream(rng_seed, purpose).random()
    return int(poisson_from_uniform(u, mean))


def draw_counts_batch(means, keys, counter: int = 0) -> np.ndarray:
    """Poisson counts with the given means, one stream key per entry."""
    keys = np.asarray(keys, dtype=np.uint64)
    u = rng.uniform(keys, np.full(keys.shape, counter, dtype=np.uint64))
    return poisson_from_uniform(u, means)


def time_tags(count: int, window: float, rng_seed: int, purpose: str = "timetags") -> np.ndarray:
    """Arrival times (integer ns, 10 ns grid) for ``count`` photons in ``window``."""
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    u = rng.Stream(rng_seed, purpose).random(count)
    ticks = np.floor(u * window * 1e9 / TIMETAG_RESOLUTION_NS).astype(np.int64)
    return np.sort(ticks) * TIMETAG_RESOLUTION_NS


def write_time_tags(tags, fh) -> None:
    for tag in tags:
        fh.write(f"{int(tag)}\n")


def read_time_tags(fh) -> np.ndarray:
    return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)


def choose_detection_threshold(dark_mean: float, bound: float = 1e-7) -> int:
    """Smallest cutoff ``c`` with P(X >= c) <= bound for X ~ Poisson(dark_mean).

    Counts at or above the cutoff are read as bright (S manifold).
    """
    if dark_mean < 0:
        raise ValueError("dark_mean must be >= 0")
    if not 0 < bound < 1:
        raise ValueError("bound must be in (0, 1)")
    if dark_mean == 0:
        return 1
    c = max(int(stats.poisson.isf(bound, dark_mean)) - 2, 1)
    while stats.poisson.sf(c - 1, dark_mean) > bound:
        c += 1
    while c > 1 and stats.poisson.sf(c - 2, dark_mean) <= bound:
        c -= 1
    return c


def choose_doppler_threshold(cooling_mean: float, bound: float = 1e-6) -> int:
    """Largest cutoff ``c`` with P(X < c) <= bound for X ~ Poisson(cooling_mean).

    Doppler counts below the cutoff flag a cooling or storage failure.
    """
    if not cooling_mean > 0:
        raise ThresholdError("cooling_mean must be positive")
    if not 0 < bound < 1:
        raise ValueError("bound must be in (0, 1)")
    if stats.poisson.cdf(0, cooling_mean) > bound:
        raise ThresholdError(
            f"cooling mean {cooling_mean} too small to monitor at bound {bound}"
        )
    c = max(int(stats.poisson.ppf(bound, cooling_mean)), 1)
    while stats.poisson.cdf(c - 1, cooling_mean) > bound:
        c -= 1
    while stats.poisson.cdf(c, cooling_mean) <= bound:
        c += 1
    return c


@dataclass(frozen=True)
class Thresholds:
    detect_cutoff: int
    doppler_cutoff: int
    detect_error_bound: float = 1e-7
    doppler_error_bound: float = 1e-6
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("detect_cutoff", "doppler_cutoff"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer")
        for name in ("detect_error_bound", "doppler_error_bound"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_json(self) -> str:
        d = self.to_dict()
        d["sha256"] = self.digest
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Thresholds":
        d = json.loads(text)
        stamp = d.pop("sha256", None)
        th = cls(**d)
        if stamp is not None and stamp != th.digest:
            raise ValueError("threshold artifact hash mismatch; file was edited after freezing")
        return th


def classify(counts, thresholds: Thresholds | int):
    """Readout for a single count, or a boolean "bright" array for an array."""
    cutoff = thresholds if isinstance(thresholds, (int, np.integer)) else thresholds.detect_cutoff
    if np.ndim(counts) == 0:
        return Readout.S_MANIFOLD if counts >= cutoff else Readout.F_MANIFOLD
    return np.asarray(counts) >= cutoff


@dataclass
class Histogram:
    label: str
    frequencies: dict[int, int]
    total: int

    def __post_init__(self):
        if sum(self.frequencies.values()) != self.total:
            raise ValueError("histogram frequencies do not sum to total")

    def count_at_least(self, cutoff: int) -> int:
        return sum(f for c, f in self.frequencies.items() if c >= cutoff)

    def rows(self):
        for c in sorted(self.frequencies):
            yield c, self.frequencies[c], self.label


def histogram(counts, label: str) -> Histogram:
    freq = Counter(int(c) for c in np.asarray(counts).ravel())
    return Histogram(label=label, frequencies=dict(sorted(freq.items())), total=sum(freq.values()))


def histograms_to_csv(hists) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["counts", "frequency", "label"])
    for h in hists:
        w.writerows(h.rows())
    return buf.getvalue()


def histograms_from_csv(text: str) -> list[Histogram]:
    grouped: dict[str, dict[int, int]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        grouped.setdefault(row["label"], {})[int(row["counts"])] = int(row["frequency"])
    return [Histogram(label, freq, sum(freq.values())) for label, freq in grouped.items()]


def histograms_to_json(hists) -> str:
    payload = [
        {"label": h.label, "total": h.total,
         "frequencies": {str(c): f for c, f in sorted(h.frequencies.items())}}
        for h in hists
    ]
    return json.dumps(payload, indent=2) + "\n"


def histograms_from_json(text: str) -> list[Histogram]:
    return [
        Histogram(d["label"], {int(c): f for c, f in d["frequencies"].items()}, d["total"])
        for d in json.loads(text)
    ]
