"""
Corpus Statistics Module.

Single-pass, mergeable mean/variance accumulators for the three acoustic
attributes and the mu +/- sigma three-level discretization built on them.
"""

import json
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

from features import AcousticAttributes, Level
from manifest import UtteranceRecord

log = logging.getLogger(__name__)

# attribute name -> (continuous field, level field) on AcousticAttributes
ATTRIBUTES: dict[str, tuple[str, str]] = {
    "pitch": ("pitch_mean_hz", "pitch_level"),
    "loudness": ("loudness_lufs", "energy_level"),
    "rate": ("speaking_rate_pps", "rate_level"),
}


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class RunningMoments:
    """
    Count, mean and sum of squared deviations of a stream of values.

    Attributes:
        n: Number of values seen.
        mean: Running mean.
        m2: Sum of squared deviations from the mean.
    """

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, value: float) -> "RunningMoments":
        """Welford update with one value."""
        n = self.n + 1
        delta = value - self.mean
        mean = self.mean + delta / n
        return RunningMoments(n, mean, self.m2 + delta * (value - mean))

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        """Chan parallel combination of two accumulators."""
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = (self.n * self.mean + other.n * other.mean) / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return RunningMoments(n, mean, m2)

    def sigma(self, sample: bool = False) -> float:
        """
        Standard deviation.

        Args:
            sample: Use the n - 1 denominator instead of n.

        Raises:
            StatsError: If too few values were seen for the chosen estimator.
        """
        denominator = self.n - 1 if sample else self.n
        if denominator <= 0:
            raise StatsError(f"standard deviation needs more than {self.n} value(s)")
        return math.sqrt(max(self.m2, 0.0) / denominator)


@dataclass(frozen=True)
class CorpusStats:
    pitch: RunningMoments = field(default_factory=RunningMoments)
    loudness: RunningMoments = field(default_factory=RunningMoments)
    rate: RunningMoments = field(default_factory=RunningMoments)

    def moments(self, attribute: str) -> RunningMoments:
        return getattr(self, attribute)

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {name: asdict(self.moments(name)) for name in ATTRIBUTES}


def _value(attrs: AcousticAttributes, attribute: str) -> float | None:
    return getattr(attrs, ATTRIBUTES[attribute][0])


def accumulate(stats: CorpusStats, attrs: AcousticAttributes) -> CorpusStats:
    """
    Fold one utterance's continuous attributes into the statistics.

    Raises:
        StatsError: If a continuous value is missing or not finite.
    """
    updated = {}
    for name in ATTRIBUTES:
        value = _value(attrs, name)
        if value is None or not math.isfinite(value):
            raise StatsError(f"attribute {name} is {value!r}; all three values are required")
        updated[name] = stats.moments(name).push(value)
    return CorpusStats(**updated)


def merge(a: CorpusStats, b: CorpusStats) -> CorpusStats:
    return CorpusStats(**{name: a.moments(name).merge(b.moments(name)) for name in ATTRIBUTES})


def corpus_stats(records: Iterable[UtteranceRecord]) -> tuple[CorpusStats, list[str]]:
    """
    Accumulate statistics over records.

    Records without attributes or without a voiced pitch are skipped and
    returned by id so the caller can report them.
    """
    stats = CorpusStats()
    skipped: list[str] = []
    for record in records:
        attrs = record.attributes
        if attrs is None or any(_value(attrs, name) is None for name in ATTRIBUTES):
            skipped.append(record.id)
            continue
        stats = accumulate(stats, attrs)
    return stats, skipped


def discretize(value: float, mu: float, sigma: float) -> Level:
    """
    Map a value to Low / Medium / High around mu +/- sigma.

    Boundary values are Medium.

    Raises:
        StatsError: If value is not finite or sigma is negative.
    """
    if not math.isfinite(value):
        raise StatsError(f"cannot discretize non-finite value {value!r}")
    if not sigma >= 0:
        raise StatsError(f"sigma must be >= 0, got {sigma}")
    if value < mu - sigma:
        return Level.LOW
    if value > mu + sigma:
        return Level.HIGH
    return Level.MEDIUM


def discretize_attributes(
    records: Sequence[UtteranceRecord], stats: CorpusStats, sample_sigma: bool = False
) -> list[UtteranceRecord]:
    """
    Attach pitch, energy and rate levels to every record.

    Args:
        records: Records whose attributes are fully extracted.
        stats: Corpus statistics, with at least two values per attribute.
        sample_sigma: Use the sample standard deviation.

    Returns:
        New records with the three levels set; continuous values unchanged.

    Raises:
        StatsError: If the statistics are too thin or a record lacks a value.
    """
    bands: dict[str, tuple[float, float]] = {}
    for name in ATTRIBUTES:
        moments = stats.moments(name)
        if moments.n < 2:
            raise StatsError(f"{name} statistics hold {moments.n} value(s); at least 2 are required")
        bands[name] = (moments.mean, moments.sigma(sample_sigma))

    out: list[UtteranceRecord] = []
    for record in records:
        attrs = record.attributes
        if attrs is None:
            raise StatsError(f"{record.id}: attributes not extracted")
        levels = {}
        for name, (_, level_field) in ATTRIBUTES.items():
            value = _value(attrs, name)
            if value is None:
                raise StatsError(f"{record.id}: {name} value missing")
            levels[level_field] = discretize(value, *bands[name])
        out.append(record.model_copy(update={"attributes": attrs.model_copy(update=levels)}))
    return out


def save_stats(stats: CorpusStats, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(stats.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_stats(path: str | Path) -> CorpusStats:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    try:
        return CorpusStats(**{name: RunningMoments(**payload[name]) for name in ATTRIBUTES})
    except (KeyError, TypeError) as e:
        raise StatsError(f"{path}: malformed stats document ({e})") from e
