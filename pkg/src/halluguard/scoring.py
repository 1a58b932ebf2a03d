"""Total Hallucination Score, reductions and corpus statistics.

More negative THS means fewer perceived hallucinations, so a positive
``percent_reduction`` is an improvement.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

from .kpi import KpiRecord

DEFAULT_NA = 3
# THS values this close to zero are treated as zero (float noise such as -9.25e-18)
ZERO_TOL = 1e-12


class EmptyInput(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


@dataclass(frozen=True)
class WeightVector:
    w1: float = 0.25
    w2: float = 0.25
    w3: float = 0.25
    w4: float = 0.25

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"weight {name} must be a positive finite number, got {v!r}")
            object.__setattr__(self, name, v)

    @classmethod
    def parse(cls, text: str) -> WeightVector:
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected 4 comma-separated weights, got {text!r}")
        return cls(*(float(p) for p in parts))

    @property
    def total(self) -> float:
        return self.w1 + self.w2 + self.w3 + self.w4

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w1, self.w2, self.w3, self.w4)


@dataclass(frozen=True)
class ThsTriple:
    ths1: float
    ths2: float
    ths3: float

    def __post_init__(self):
        for name in ("ths1", "ths2", "ths3"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.ths1, self.ths2, self.ths3)


@dataclass(frozen=True)
class GroupStats:
    mean: float
    sd: float
    total: float
    n: int


@dataclass(frozen=True)
class AnovaResult:
    f_stat: float
    df_between: int
    df_within: int
    degenerate: bool = False  # zero within-group variance: f_stat is inf


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float

    def pdf(self, x: float) -> float:
        z = (x - self.mu) / self.sigma
        return math.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))


def _check_na(na: int) -> None:
    if na < 1:
        raise ValueError(f"number of agents must be >= 1, got {na}")


def ths_plain(k: KpiRecord, na: int = DEFAULT_NA) -> float:
    _check_na(na)
    return (k.fcd - (k.fgr + k.fdf + k.ecs)) / na


def ths_weighted(k: KpiRecord, w: WeightVector | None = None, na: int = DEFAULT_NA) -> float:
    _check_na(na)
    w = w or WeightVector()
    num = w.w1 * k.fcd - (w.w2 * k.fgr + w.w3 * k.fdf + w.w4 * k.ecs)
    return num / (na * w.total)


def percent_reduction(ths_from: float, ths_to: float) -> float | None:
    """Relative drop from ``ths_from`` to ``ths_to`` in percent; None if the baseline is zero."""
    if abs(ths_from) <= ZERO_TOL:
        return None
    return (ths_from - ths_to) / abs(ths_from) * 100.0


def delta_ths(t: ThsTriple) -> float:
    return t.ths3 - t.ths1


def group_stats(values: Sequence[float], population_sd: bool = False) -> GroupStats:
    n = len(values)
    if n == 0:
        raise EmptyInput("group_stats needs at least one value")
    total = math.fsum(values)
    if n == 1:
        sd = 0.0
    else:
        sd = statistics.pstdev(values) if population_sd else statistics.stdev(values)
    return GroupStats(mean=total / n, sd=sd, total=total, n=n)


def anova_oneway(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """One-way ANOVA F statistic with (between, within) degrees of freedom."""
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise DegenerateInput("ANOVA needs at least 2 groups of at least 2 values")
    n_total = sum(len(g) for g in groups)
    grand = math.fsum(math.fsum(g) for g in groups) / n_total
    means = [math.fsum(g) / len(g) for g in groups]
    ss_between = math.fsum(len(g) * (m - grand) ** 2 for g, m in zip(groups, means))
    ss_within = math.fsum((x - m) ** 2 for g, m in zip(groups, means) for x in g)
    df_between = len(groups) - 1
    df_within = n_total - len(groups)
    if ss_within == 0.0:
        if ss_between == 0.0:
            raise DegenerateInput("all values identical; F is undefined")
        return AnovaResult(math.inf, df_between, df_within, degenerate=True)
    f = (ss_between / df_between) / (ss_within / df_within)
    return AnovaResult(f, df_between, df_within)


def gaussian_fit(values: Sequence[float]) -> GaussianFit:
    if len(values) < 2:
        raise DegenerateInput("gaussian_fit needs at least 2 values")
    stats = group_stats(values)
    if stats.sd == 0.0:
        raise DegenerateInput("zero spread; no Gaussian to fit")
    return GaussianFit(stats.mean, stats.sd)
