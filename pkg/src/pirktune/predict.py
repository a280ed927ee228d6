"""Kernel and variant runtime predictions, ranking, subset selection and
autotuning-strategy simulation.

Kernel runtime:   phi = alpha * beta / (delta * f)        [seconds]
Variant runtime:  theta = sum(phi) + barriers * comm(tau)  [seconds]

The selection Lambda is the prefix of the ascending ranking whose theta stays
within a percentage deviation of the best prediction.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import MeasurementError, ModelError

STRATEGIES = (
    "BestVariant",
    "RunAll",
    "OffsitePreselect5",
    "OffsitePreselect10",
    "RandomSelect",
)


# --------------------------------------------------------------------------
# Kernel runtime (phi)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelPrediction:
    kernel_id: str
    tau: int
    n: int
    alpha: float  # cycles per cache-line unit
    beta: float  # iterations
    delta: int  # elements per cache line
    frequency: float  # Hz
    phi: float  # seconds


def kernel_runtime(alpha: float, beta: float, delta: float, frequency: float) -> float:
    if alpha <= 0 or beta <= 0 or delta <= 0 or frequency <= 0:
        raise ModelError(
            f"kernel runtime needs positive factors "
            f"(alpha={alpha}, beta={beta}, delta={delta}, f={frequency})"
        )
    return alpha * beta / (delta * frequency)


# --------------------------------------------------------------------------
# Barrier-cost model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CommModel:
    intercept: float  # seconds
    slope: float  # seconds per thread
    samples: int
    residual_norm: float
    tau_min: int
    tau_max: int

    def cost(self, tau: int) -> float:
        # below the fitted range the line is clamped to the nearest fitted
        # point; OLS extrapolation to tau -> 0 can go negative
        tau = max(tau, self.tau_min)
        return max(0.0, self.intercept + self.slope * tau)


ZERO_COMM = CommModel(0.0, 0.0, 0, 0.0, 1, 1)


def fit_comm_model(samples: list[tuple[int, float]]) -> CommModel:
    """Ordinary least squares over (thread count, seconds) samples."""
    if len({tau for tau, _ in samples}) < 2:
        raise MeasurementError("barrier fit needs at least two distinct thread counts")
    count = len(samples)
    mean_x = sum(tau for tau, _ in samples) / count
    mean_y = sum(t for _, t in samples) / count
    sxx = sum((tau - mean_x) ** 2 for tau, _ in samples)
    sxy = sum((tau - mean_x) * (t - mean_y) for tau, t in samples)
    slope = sxy / sxx
    intercept = mean_y - slope * mean_x
    residual = sum((t - (intercept + slope * tau)) ** 2 for tau, t in samples) ** 0.5
    taus = [tau for tau, _ in samples]
    return CommModel(intercept, slope, count, residual, min(taus), max(taus))


# --------------------------------------------------------------------------
# Variant runtime (theta)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VariantPrediction:
    variant_id: str
    tau: int
    n: int
    theta: float  # seconds
    kernel_phis: tuple[tuple[str, float], ...]
    t_com: float
    barriers: int


def variant_prediction(
    variant_id: str,
    kernels: list[KernelPrediction],
    barriers: int,
    comm: CommModel,
    tau: int,
) -> VariantPrediction:
    taus = {k.tau for k in kernels}
    ns = {k.n for k in kernels}
    if len(taus) > 1 or len(ns) > 1:
        raise ModelError(
            f"variant {variant_id}: kernel predictions mix tau={taus} n={ns}"
        )
    if taus and tau not in taus:
        raise ModelError(f"variant {variant_id}: kernels predicted for tau={taus}, not {tau}")
    t_com = barriers * comm.cost(tau)
    theta = sum(k.phi for k in kernels) + t_com
    return VariantPrediction(
        variant_id=variant_id,
        tau=tau,
        n=kernels[0].n if kernels else 0,
        theta=theta,
        kernel_phis=tuple((k.kernel_id, k.phi) for k in kernels),
        t_com=t_com,
        barriers=barriers,
    )


# --------------------------------------------------------------------------
# Ranking and selection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Selection:
    ranking: tuple[VariantPrediction, ...]  # ascending theta, ties by id
    deviation: float  # percent
    selected: tuple[str, ...]  # Lambda: ids of the leading variants

    @property
    def best(self) -> VariantPrediction:
        return self.ranking[0]


def rank_and_select(preds: list[VariantPrediction], deviation: float) -> Selection:
    if not preds:
        raise ModelError("cannot rank an empty prediction list")
    if deviation < 0:
        raise ModelError("deviation must be >= 0")
    if len({(p.tau, p.n) for p in preds}) > 1:
        raise ModelError("ranking requires uniform (tau, n) across predictions")
    ranking = tuple(sorted(preds, key=lambda p: (p.theta, p.variant_id)))
    bound = ranking[0].theta * (1.0 + deviation / 100.0)
    selected = []
    for pred in ranking:
        if pred.theta <= bound:
            selected.append(pred.variant_id)
        else:
            break
    return Selection(ranking=ranking, deviation=deviation, selected=tuple(selected))


# --------------------------------------------------------------------------
# Strategy metrics
# --------------------------------------------------------------------------

def tuning_overhead(tested_runtimes: list[float], t_best: float) -> float:
    """Percent extra time of testing the subset vs. running its best variant:
    (t_tune - k * t_best) / (k * t_best) * 100."""
    if not tested_runtimes:
        raise MeasurementError("tuning overhead needs a non-empty subset")
    if t_best <= 0:
        raise MeasurementError("t_best must be positive")
    k = len(tested_runtimes)
    t_tune = sum(tested_runtimes)
    return (t_tune - k * t_best) / (k * t_best) * 100.0


def performance_gain(t_run_all: float, t_strategy: float) -> float:
    """Percent time saved vs. exhaustively running everything."""
    if t_run_all <= 0:
        raise MeasurementError("t_run_all must be positive")
    return (t_run_all - t_strategy) / t_run_all * 100.0


def strategy_time(tested_runtimes: list[float], total_variants: int) -> float:
    """Campaign time: test the subset, then run its measured best for the
    remaining total - k trials."""
    if not tested_runtimes:
        raise MeasurementError("strategy time needs a non-empty subset")
    k = len(tested_runtimes)
    if total_variants < k:
        raise MeasurementError("subset larger than the variant pool")
    return sum(tested_runtimes) + (total_variants - k) * min(tested_runtimes)


def run_strategy(
    strategy: str,
    measured: dict[str, float],
    selected: tuple[str, ...] | list[str],
    k: int = 20,
    seed: int = 0,
) -> tuple[str, float]:
    """Simulate one strategy; returns (chosen variant, campaign time t_AT)."""
    if not measured:
        raise MeasurementError("no measurements given")
    total = len(measured)

    def best_of(ids) -> str:
        missing = [v for v in ids if v not in measured]
        if missing:
            raise MeasurementError(f"missing measurements for {sorted(missing)}")
        return min(ids, key=lambda v: (measured[v], v))

    if strategy == "BestVariant":
        chosen = best_of(sorted(measured))
        return chosen, total * measured[chosen]
    if strategy == "RunAll":
        chosen = best_of(sorted(measured))
        return chosen, sum(measured.values())
    if strategy.startswith("OffsitePreselect"):
        if not selected:
            raise MeasurementError("preselection requires a non-empty subset")
        chosen = best_of(list(selected))
        times = [measured[v] for v in selected]
        return chosen, strategy_time(times, total)
    if strategy == "RandomSelect":
        k = min(k, total)
        rng = random.Random(seed)
        sample = rng.sample(sorted(measured), k)
        chosen = best_of(sample)
        times = [measured[v] for v in sample]
        return chosen, strategy_time(times, total)
    raise MeasurementError(f"unknown strategy {strategy!r}")


# --------------------------------------------------------------------------
# Measurement files
# --------------------------------------------------------------------------

def load_measurements(path: str | Path) -> dict[tuple[str, int, int], float]:
    """CSV with header ``variant,tau,n,seconds``."""
    out: dict[tuple[str, int, int], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"variant", "tau", "n", "seconds"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise MeasurementError(
                f"{path}: expected header variant,tau,n,seconds, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            key = (row["variant"], int(row["tau"]), int(row["n"]))
            out[key] = float(row["seconds"])
    if not out:
        raise MeasurementError(f"{path}: no measurement rows")
    return out


def load_barrier_benchmark(path: str | Path) -> list[tuple[int, float]]:
    """CSV with header ``tau,seconds``."""
    samples: list[tuple[int, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"tau", "seconds"}:
            raise MeasurementError(
                f"{path}: expected header tau,seconds, got {reader.fieldnames}"
            )
        for row in reader:
            samples.append((int(row["tau"]), float(row["seconds"])))
    if not samples:
        raise MeasurementError(f"{path}: no benchmark rows")
    return samples
