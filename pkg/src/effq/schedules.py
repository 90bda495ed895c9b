"""Vanishing stepsize schedules and epoch weight algebra.

Stage ``t`` (counting from 0) uses ``beta(t)``.  Grouping stages into epochs
``[kT, (k+1)T)``, the update unrolls into a convex-style combination with
weights ``alpha_t = beta_t * prod_{l=t+1}^{(k+1)T-1} (1 - beta_l)`` whose sum
is the epoch stepsize ``alpha_(k) = 1 - prod_t (1 - beta_t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_PRODUCT_CUTOFF = 64


class Schedule:
    """Base class; subclasses provide :meth:`betas`."""

    family = "custom"

    def betas(self, start: int, stop: int) -> np.ndarray:
        raise NotImplementedError

    def beta(self, t: int) -> float:
        if t < 0:
            raise ValueError("stage index must be non-negative")
        return float(self.betas(t, t + 1)[0])

    def to_string(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class HarmonicSchedule(Schedule):
    """``beta_t = 1 / (t + c)`` with ``c >= 1``."""

    c: float = 1.0
    family = "harmonic"

    def __post_init__(self):
        if not self.c >= 1.0:
            raise ValueError(f"harmonic schedule needs c >= 1, got {self.c}")

    def betas(self, start, stop):
        return 1.0 / (np.arange(start, stop, dtype=np.float64) + self.c)

    def to_string(self):
        return f"harmonic:c={self.c!r}"


@dataclass(frozen=True)
class ConstantSchedule(Schedule):
    b: float = 0.1
    family = "constant"

    def __post_init__(self):
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"constant stepsize must lie in [0, 1], got {self.b}")

    def betas(self, start, stop):
        return np.full(max(stop - start, 0), float(self.b))

    def to_string(self):
        return f"constant:b={self.b!r}"


@dataclass(frozen=True, eq=False)
class TableSchedule(Schedule):
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    source: str = ""
    family = "table"

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ValueError("stepsize table must be one-dimensional")
        if np.any(~np.isfinite(vals)) or np.any(vals < 0) or np.any(vals > 1):
            raise ValueError("stepsize table entries must lie in [0, 1]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def betas(self, start, stop):
        if start < 0:
            raise ValueError("stage index must be non-negative")
        if stop > self.values.size:
            raise IndexError(
                f"stepsize table has {self.values.size} entries, stage {stop - 1} requested"
            )
        return self.values[start:stop].copy()

    def to_string(self):
        return f"table:{self.source}"


def parse_schedule(text: str) -> Schedule:
    """Parse ``harmonic:c=<x>``, ``constant:b=<x>`` or ``table:<path>``."""
    family, _, rest = text.partition(":")
    family = family.strip().lower()
    if family == "table":
        if not rest:
            raise ValueError("table schedule needs a path: table:<path>")
        lines = Path(rest).read_text(encoding="utf-8").split()
        return TableSchedule(np.array([float(x) for x in lines]), source=rest)
    params = {}
    for part in filter(None, rest.split(",")):
        key, eq, val = part.partition("=")
        if not eq:
            raise ValueError(f"bad schedule parameter {part!r} in {text!r}")
        params[key.strip()] = float(val)
    expected = {"harmonic": "c", "constant": "b"}.get(family)
    if expected is None:
        raise ValueError(f"unknown schedule family {family!r} in {text!r}")
    extra = set(params) - {expected}
    if extra:
        raise ValueError(f"unknown parameter(s) {sorted(extra)} for {family} schedule")
    if family == "harmonic":
        return HarmonicSchedule(params.get("c", 1.0))
    return ConstantSchedule(params.get("b", 0.1))


# -- convergence conditions --------------------------------------------------

@dataclass
class Verdict:
    holds: bool | None
    method: str  # "analytic", "numeric" or "diagnostic"
    note: str = ""
    value: float | None = None


@dataclass
class ConditionReport:
    monotone: Verdict
    non_summable: Verdict
    square_summable: Verdict
    no_recency_bias: Verdict

    def as_dict(self):
        return {
            name: vars(getattr(self, name))
            for name in ("monotone", "non_summable", "square_summable", "no_recency_bias")
        }

    @property
    def all_hold(self) -> bool:
        return all(
            v.holds is True
            for v in (self.monotone, self.non_summable, self.square_summable, self.no_recency_bias)
        )


def check_conditions(schedule: Schedule, horizon: int = 10_000) -> ConditionReport:
    """Verdicts for monotonicity, non-summability, square-summability and no recency bias.

    Harmonic and constant families are decided in closed form.  Tables get
    numeric checks of monotonicity and no-recency-bias over the horizon, and
    partial sums as a finite-horizon diagnostic for the two summability
    conditions, which no finite prefix can decide.
    """
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    if isinstance(schedule, HarmonicSchedule):
        return ConditionReport(
            Verdict(True, "analytic", "1/(t+c) strictly decreasing"),
            Verdict(True, "analytic", "harmonic series diverges"),
            Verdict(True, "analytic", "sum 1/(t+c)^2 converges"),
            Verdict(True, "analytic", "equality: 1/(t+c) - 1/(t+c+1) = beta_t * beta_{t+1}"),
        )
    if isinstance(schedule, ConstantSchedule):
        b = schedule.b
        return ConditionReport(
            Verdict(False, "analytic", "constant sequence is not strictly decreasing"),
            Verdict(b > 0, "analytic", "sum of constant b diverges iff b > 0"),
            Verdict(b == 0, "analytic", "sum of b^2 converges iff b = 0"),
            Verdict(b == 0, "analytic", f"b - b = 0 >= b^2 = {b * b!r} iff b = 0"),
        )
    n = horizon
    if isinstance(schedule, TableSchedule):
        n = min(horizon, schedule.values.size)
    beta = schedule.betas(0, n)
    if n >= 2:
        diffs = beta[:-1] - beta[1:]
        mono = bool(np.all(diffs > 0))
        # the equality case sits on rounding noise of the subtraction, a few ulps of beta_t
        slack = 4 * np.finfo(np.float64).eps * beta[:-1]
        recency = bool(np.all(diffs >= beta[:-1] * beta[1:] - slack))
    else:
        mono = recency = True
    note = f"checked over t < {n}"
    return ConditionReport(
        Verdict(mono, "numeric", note),
        Verdict(None, "diagnostic", f"finite-horizon diagnostic only; partial sum over t < {n}",
                float(math.fsum(beta))),
        Verdict(None, "diagnostic", f"finite-horizon diagnostic only; partial sum over t < {n}",
                float(math.fsum(beta * beta))),
        Verdict(recency, "numeric", note),
    )


# -- epoch weights ----------------------------------------------------------

@dataclass
class EpochWeights:
    k: int
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    total: float

    @property
    def start(self) -> int:
        return self.k * self.T

    @property
    def one_minus_product(self) -> float:
        """``1 - prod_t (1 - beta_t)`` over the epoch."""
        return 1.0 - _suffix_products(self.betas)[0]

    @property
    def normalized(self) -> np.ndarray:
        """``alpha_t / alpha_(k)``; zeros when the epoch has no weight."""
        if self.total == 0.0:
            return np.zeros_like(self.alphas)
        return self.alphas / self.total


def _suffix_products(betas: np.ndarray) -> np.ndarray:
    """``out[j] = prod_{l >= j} (1 - betas[l])``, with ``out[len] = 1``."""
    T = betas.size
    out = np.ones(T + 1)
    if T <= LOG_PRODUCT_CUTOFF or np.any(betas >= 1.0):
        for j in range(T - 1, -1, -1):
            out[j] = out[j + 1] * (1.0 - betas[j])
        return out
    # Kahan-compensated running sum of log(1 - beta) for long epochs
    logs = np.log1p(-betas)
    total = 0.0
    comp = 0.0
    for j in range(T - 1, -1, -1):
        y = logs[j] - comp
        s = total + y
        comp = (s - total) - y
        total = s
        out[j] = math.exp(total)
    return out


def epoch_weights(schedule: Schedule, k: int, T: int) -> EpochWeights:
    if T < 1:
        raise ValueError("epoch length T must be >= 1")
    if k < 0:
        raise ValueError("epoch index must be non-negative")
    betas = schedule.betas(k * T, (k + 1) * T)
    suffix = _suffix_products(betas)
    alphas = betas * suffix[1:]
    return EpochWeights(k, T, betas, alphas, math.fsum(alphas))


def weight_monotonicity_check(weights: EpochWeights, rtol: float = 1e-12) -> bool:
    """True iff the epoch weights are non-increasing in ``t``.

    Harmonic schedules make all weights equal in exact arithmetic, so the
    comparison allows ``rtol`` relative rounding slack.
    """
    a = weights.alphas
    if a.size < 2:
        return True
    slack = rtol * float(np.max(np.abs(a)))
    return bool(np.all(a[:-1] >= a[1:] - slack))


def epoch_stepsize_sums(schedule: Schedule, T: int, K: int) -> dict:
    """Partial sums of epoch stepsizes over the first ``K`` epochs.

    Returns the running sums of ``alpha_(k)`` and ``alpha_(k)^2`` together
    with the square-sum cap ``T^2 * sum_t beta_t^2`` over the same stages.
    """
    totals = np.array([epoch_weights(schedule, k, T).total for k in range(K)])
    betas = schedule.betas(0, K * T)
    return {
        "alpha_partial_sums": np.cumsum(totals),
        "alpha_sq_partial_sums": np.cumsum(totals ** 2),
        "square_cap": T * T * math.fsum(betas * betas),
    }
