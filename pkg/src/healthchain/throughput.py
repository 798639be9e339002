"""Backlog of unsealed transactions under Poisson load, and sidechain sizing.

Each second brings a Poisson number of new transactions; the chain seals at
a fixed rate ``mu`` transactions per second.  Whatever has not been sealed
by the end of the horizon is the backlog.  With ``lam`` arrivals expected over
a horizon of ``T`` seconds, the backlog is close to ``max(0, lam - mu * T)``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

DAY_SECONDS = 86_400
DAYS_PER_YEAR = 365
DEFAULT_TX_PER_PATIENT_DAY = 110

# sealing rates in tx/s; cardano is a configurable default, any value in
# [254.63, 381.94) reproduces the reference sidechain counts
CHAIN_TPS: dict[str, float] = {
    "bitcoin": 7,
    "ethereum": 25,
    "iota": 50,
    "cardano": 257,
}
TABLE1_PATIENTS = (1, 1_000, 10_000, 50_000, 100_000, 200_000, 300_000)


@dataclass(frozen=True)
class WorkloadSpec:
    """``lambda_day`` is the expected number of arrivals over the horizon."""

    lambda_day: float
    horizon_seconds: int = DAY_SECONDS
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lambda_day >= 0:
            raise ValueError(f"lambda_day must be >= 0, got {self.lambda_day}")
        if self.horizon_seconds <= 0:
            raise ValueError(f"horizon_seconds must be > 0, got {self.horizon_seconds}")


@dataclass(frozen=True)
class SealModel:
    name: str
    mu_tps: float

    def __post_init__(self) -> None:
        if not self.mu_tps > 0:
            raise ValueError(f"mu_tps must be > 0, got {self.mu_tps}")


@dataclass(frozen=True)
class SimResult:
    end_backlog: int
    arrived_total: int
    sealed_total: int
    trajectory: np.ndarray | None = None


@dataclass(frozen=True)
class CapacityQuery:
    n_patients: int
    mu_tps: float
    r_per_patient_day: float = DEFAULT_TX_PER_PATIENT_DAY

    def __post_init__(self) -> None:
        if self.n_patients <= 0 or self.mu_tps <= 0 or self.r_per_patient_day <= 0:
            raise ValueError("capacity query values must all be positive")


def poisson_arrivals(spec: WorkloadSpec) -> np.ndarray:
    """Per-second arrival counts, each Poisson with mean lambda / T."""
    rng = np.random.default_rng(spec.seed)
    rate = spec.lambda_day / spec.horizon_seconds
    return rng.poisson(rate, spec.horizon_seconds).astype(np.int64)


def sealing_credits(mu_tps: float, horizon: int) -> np.ndarray:
    """Integer sealing capacity per second.

    Credit accrues at ``mu_tps`` per second and the fractional remainder
    carries over, so second ``t`` seals ``floor((t+1)mu) - floor(t mu)``.
    Unused whole credits do not accumulate.
    """
    cumulative = np.floor(np.arange(horizon + 1, dtype=np.float64) * mu_tps).astype(np.int64)
    return np.diff(cumulative)


def backlog_path(arrivals: np.ndarray, credits: np.ndarray) -> np.ndarray:
    """Backlog after each second, starting with B_0 = 0, under
    ``B[t+1] = max(0, B[t] + A[t] - c[t])``.

    Uses the closed form of that recursion: with S the running sum of
    ``A - c`` (S_0 = 0), ``B_t = S_t - min_{k<=t} S_k``.
    """
    s = np.concatenate(([0], np.cumsum(arrivals - credits)))
    return s - np.minimum.accumulate(s)


def simulate_day(spec: WorkloadSpec, seal: SealModel, trajectory: bool = False) -> SimResult:
    arrivals = poisson_arrivals(spec)
    path = backlog_path(arrivals, sealing_credits(seal.mu_tps, spec.horizon_seconds))
    arrived = int(arrivals.sum())
    end = int(path[-1])
    return SimResult(
        end_backlog=end,
        arrived_total=arrived,
        sealed_total=arrived - end,
        trajectory=path if trajectory else None,
    )


def expected_backlog(lambda_day: float, mu_tps: float, horizon: int = DAY_SECONDS) -> float:
    if lambda_day < 0 or mu_tps < 0:
        raise ValueError("rates must be non-negative")
    return max(0.0, lambda_day - mu_tps * horizon)


def mean_simulated_backlog(
    lambda_day: float, mu_tps: float, seeds: Iterable[int], horizon: int = DAY_SECONDS
) -> float:
    seal = SealModel("sim", mu_tps)
    runs = [simulate_day(WorkloadSpec(lambda_day, horizon, s), seal).end_backlog for s in seeds]
    return float(np.mean(runs))


def viability_threshold(
    mu_tps: float, start: int = 10_000_000, step: int = 10_000, horizon: int = DAY_SECONDS
) -> int:
    """Walk the daily load down from ``start`` in ``step`` decrements and
    return the first load the chain clears by the end of the horizon."""
    lam = start
    while lam > 0 and expected_backlog(lam, mu_tps, horizon) > 0:
        lam -= step
    return max(lam, 0)


@dataclass(frozen=True)
class SweepRow:
    seal_rate_tps: float
    expected_unsealed: float
    simulated_unsealed: int
    seed: int


def _sweep_row(args: tuple[float, float, int, int]) -> SweepRow:
    lam, mu, seed, horizon = args
    sim = simulate_day(WorkloadSpec(lam, horizon, seed), SealModel("sweep", mu))
    return SweepRow(mu, expected_backlog(lam, mu, horizon), sim.end_backlog, seed)


def sweep(
    lambda_day: float,
    mu_list: Sequence[float],
    seed: int = 0,
    horizon: int = DAY_SECONDS,
    workers: int = 1,
) -> list[SweepRow]:
    """One row per sealing rate, sorted by rate.  Row ``i`` simulates with
    seed ``seed + i`` so results do not depend on worker scheduling."""
    if not mu_list:
        raise ValueError("mu_list must not be empty")
    jobs = [(lambda_day, float(mu), seed + i, horizon) for i, mu in enumerate(sorted(mu_list))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_row, jobs))
    return [_sweep_row(job) for job in jobs]


SWEEP_COLUMNS = ("seal_rate_tps", "expected_unsealed", "simulated_unsealed", "seed")


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_sweep_csv(rows: Iterable[SweepRow], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([_num(r.seal_rate_tps), _num(r.expected_unsealed), r.simulated_unsealed, r.seed])


# --- sidechain sizing -----------------------------------------------------------


def sidechains_needed(q: CapacityQuery) -> int:
    """ceil(daily load / daily sealing capacity of one chain), at least 1.

    Computed in exact rational arithmetic so loads that land exactly on a
    capacity multiple are not bumped up by float error.
    """
    load = Fraction(q.n_patients) * Fraction(q.r_per_patient_day)
    capacity = Fraction(q.mu_tps) * DAY_SECONDS
    return max(1, math.ceil(load / capacity))


def capacity_table(
    patients: Sequence[int] = TABLE1_PATIENTS,
    chains: Mapping[str, float] = CHAIN_TPS,
    rate_per_patient: float = DEFAULT_TX_PER_PATIENT_DAY,
) -> list[dict]:
    rows = []
    for n in patients:
        row = {"patients": n, "tx_per_day": n * rate_per_patient}
        for name, mu in chains.items():
            row[name] = sidechains_needed(CapacityQuery(n, mu, rate_per_patient))
        rows.append(row)
    return rows


def encounters_per_day(annual_encounters: int) -> int:
    if annual_encounters < 0:
        raise ValueError("annual_encounters must be >= 0")
    return annual_encounters // DAYS_PER_YEAR


def tx_per_patient_day(daily_tx: float, daily_encounters: float) -> int:
    """Transactions per patient per day, rounded up to a whole transaction.

    Raises ZeroDivisionError when there are no encounters.
    """
    if daily_encounters == 0:
        raise ZeroDivisionError("daily_encounters must be positive")
    return math.ceil(Fraction(daily_tx) / Fraction(daily_encounters))
