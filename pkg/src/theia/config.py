"""Shared configuration: network profiles, cost model, simulator knobs.

Profiles and defaults can be overridden through a plain key=value config
file, e.g.::

    wifi.rtt_ms=66
    wifi.tx_power_mw=266
    wifi.bandwidth_bytes_per_s=2000000
    g3.rtt_ms=95
    g3.tx_power_mw=571
    g3.bandwidth_bytes_per_s=300000
    alpha_mw=100000
    idle_mw=0
    flat_fraction=0.1
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class CostModel:
    """Charge units for one search: per-device flat entry, per photo, per result.

    The per-result charge dominates by an order of magnitude so that paying
    for access to a matched photo is the main cost.
    """

    flat_per_device: int = 1
    per_photo: int = 1
    per_result: int = 10

    def minimum_budget(self) -> int:
        """Smallest budget that can produce one result on one device."""
        return self.flat_per_device + self.per_photo + self.per_result

    def __post_init__(self) -> None:
        if self.per_result < 10 * max(self.flat_per_device, self.per_photo):
            raise ValueError(
                "per_result must dominate flat/per-photo charges by 10x, got "
                f"{self.per_result} vs {self.flat_per_device}/{self.per_photo}"
            )


@dataclass(frozen=True)
class NetworkProfile:
    name: str
    rtt_ms: float
    bandwidth_bytes_per_s: float
    tx_power_mw: float

    def __post_init__(self) -> None:
        if self.rtt_ms < 0:
            raise ValueError(f"rtt_ms must be >= 0, got {self.rtt_ms}")
        if self.bandwidth_bytes_per_s <= 0:
            raise ValueError("bandwidth must be > 0")

    def tx_time_ms(self, nbytes: int) -> float:
        """Time to push one photo of `nbytes` through this link."""
        return self.rtt_ms + 1000.0 * nbytes / self.bandwidth_bytes_per_s

    def with_extra_rtt(self, extra_rtt_ms: float) -> "NetworkProfile":
        return dataclasses.replace(self, rtt_ms=self.rtt_ms + extra_rtt_ms)


# Measured transmit power / median RTT for the two reference links; the
# bandwidths complete the transfer-time formula and are config-overridable.
WIFI = NetworkProfile("wifi", rtt_ms=66.0, bandwidth_bytes_per_s=2_000_000.0, tx_power_mw=266.0)
G3 = NetworkProfile("g3", rtt_ms=95.0, bandwidth_bytes_per_s=300_000.0, tx_power_mw=571.0)


@dataclass
class SimConfig:
    """Simulator defaults; every field is overridable via a config file."""

    # Compute power draw. Tuned so the default 30 ms/photo face predicate
    # over 100 photos lands at ~300 J in the default scenario.
    alpha_mw: float = 100_000.0
    idle_mw: float = 0.0
    profiles: dict[str, NetworkProfile] = field(
        default_factory=lambda: {"wifi": WIFI, "g3": G3}
    )
    cost_model: CostModel = field(default_factory=CostModel)
    # Fraction of a session budget allowed to go to per-device flat charges.
    flat_fraction: float = 0.1
    # Training phase: full local evaluations, then transfer probes.
    training_photos: int = 5
    training_probes: int = 2
    # Evaluation phase: replan cadence and the sample floor for rank use.
    replan_interval: int = 5
    min_rank_samples: int = 10
    cost_ema_lambda: float = 0.2

    def profile(self, name: str) -> NetworkProfile:
        return self.profiles[name]


def _apply_kv(cfg: SimConfig, key: str, value: str) -> None:
    profile_fields = {"rtt_ms", "bandwidth_bytes_per_s", "tx_power_mw"}
    if "." in key:
        pname, pfield = key.split(".", 1)
        if pfield not in profile_fields:
            raise KeyError(f"unknown profile field {key!r}")
        base = cfg.profiles.get(pname, NetworkProfile(pname, 0.0, 1.0, 0.0))
        cfg.profiles[pname] = dataclasses.replace(base, **{pfield: float(value)})
        return
    if key in ("alpha_mw", "idle_mw", "flat_fraction", "cost_ema_lambda"):
        setattr(cfg, key, float(value))
    elif key in ("training_photos", "training_probes", "replan_interval", "min_rank_samples"):
        setattr(cfg, key, int(value))
    elif key in ("flat_per_device", "per_photo", "per_result"):
        cfg.cost_model = dataclasses.replace(cfg.cost_model, **{key: int(value)})
    else:
        raise KeyError(f"unknown config key {key!r}")


def load_config(path: str | Path | None = None) -> SimConfig:
    """Build a SimConfig from defaults plus an optional key=value file."""
    cfg = SimConfig()
    if path is None:
        return cfg
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        try:
            _apply_kv(cfg, key.strip(), value.strip())
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return cfg
