"""Virtual-time energy accounting and the linear device energy model.

Energy is linear in time: compute draws `alpha` milliwatts, wireless
transmit draws `beta` milliwatts, and an optional `idle` baseline applies to
elapsed virtual time. Devices fit alpha/beta by least squares from training
observations (full local evaluations plus transfer probes); the fitted model
prices the wireless pseudo-predicate in compute-millisecond equivalents so
the planner compares like units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from theia.config import NetworkProfile


@dataclass(frozen=True)
class EnergyModel:
    alpha_mw: float  # power draw during predicate compute
    beta_mw: float  # power draw during wireless transmit
    idle_mw: float = 0.0

    def __post_init__(self) -> None:
        if min(self.alpha_mw, self.beta_mw, self.idle_mw) < 0:
            raise ValueError("power coefficients must be >= 0")

    def compute_mj(self, compute_ms: float) -> float:
        return self.alpha_mw * compute_ms / 1000.0

    def transmit_mj(self, tx_ms: float) -> float:
        return self.beta_mw * tx_ms / 1000.0

    def idle_mj(self, elapsed_ms: float) -> float:
        return self.idle_mw * elapsed_ms / 1000.0


class EnergyFitError(ValueError):
    """Not enough information to identify the energy coefficients."""


def fit_energy_model(
    samples: Sequence[tuple[float, float, float]], idle_mw: float = 0.0
) -> EnergyModel:
    """Least-squares fit of (compute_ms, tx_ms, measured_mj) observations.

    The two power coefficients are identified from the two time columns;
    the idle baseline is not separable from them in this sample format and
    is carried through unchanged (default 0).
    """
    if len(samples) < 3:
        raise EnergyFitError(f"need at least 3 samples, got {len(samples)}")
    arr = np.asarray(samples, dtype=np.float64)
    design = arr[:, :2] / 1000.0  # seconds
    measured = arr[:, 2]
    for column, name in ((0, "compute"), (1, "tx")):
        if np.allclose(design[:, column], 0.0):
            raise EnergyFitError(f"samples never exercise the {name} dimension")
    if np.linalg.matrix_rank(design) < 2:
        raise EnergyFitError("design matrix is rank deficient: compute and tx move together")
    coef, *_ = np.linalg.lstsq(design, measured, rcond=None)
    alpha, beta = (max(0.0, float(c)) for c in coef)
    return EnergyModel(alpha_mw=alpha, beta_mw=beta, idle_mw=idle_mw)


def offload_energy_per_photo(
    profile: NetworkProfile, model: EnergyModel, photo_bytes: int
) -> float:
    """Millijoules to push one photo of `photo_bytes` through the link."""
    if photo_bytes <= 0:
        raise ValueError(f"photo_bytes must be > 0, got {photo_bytes}")
    return model.transmit_mj(profile.tx_time_ms(photo_bytes))


def offload_cost_compute_ms(
    profile: NetworkProfile, model: EnergyModel, photo_bytes: int
) -> float:
    """The wireless pseudo-predicate's cost in compute-ms equivalents."""
    energy_mj = offload_energy_per_photo(profile, model, photo_bytes)
    return energy_mj / (model.alpha_mw / 1000.0)


@dataclass
class EnergyLedger:
    """Per-device accumulated millijoules, split by activity."""

    compute_mj: float = 0.0
    transmit_mj: float = 0.0
    idle_mj: float = 0.0

    def add_compute(self, mj: float) -> None:
        if mj < 0:
            raise ValueError("energy must be >= 0")
        self.compute_mj += mj

    def add_transmit(self, mj: float) -> None:
        if mj < 0:
            raise ValueError("energy must be >= 0")
        self.transmit_mj += mj

    def add_idle(self, mj: float) -> None:
        if mj < 0:
            raise ValueError("energy must be >= 0")
        self.idle_mj += mj

    @property
    def total_mj(self) -> float:
        return self.compute_mj + self.transmit_mj + self.idle_mj

    def snapshot(self) -> dict[str, float]:
        return {
            "compute_mj": self.compute_mj,
            "transmit_mj": self.transmit_mj,
            "idle_mj": self.idle_mj,
            "total_mj": self.total_mj,
        }
