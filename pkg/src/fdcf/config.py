"""Scenario, power, pilot, and solver configuration.

All powers are stored in linear watts; helpers convert from the dBm/dB values
usually quoted in link budgets. The defaults describe a 64-AP network in a
1-km disc with 2 antennas per AP, -104 dBm receiver noise, -110 dB residual
self-interference, 23 dBm UE budgets, and a 43 dBm total AP budget.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import yaml


def dbm_to_watts(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watts_to_dbm(x_w: float) -> float:
    import math

    return 10.0 * math.log10(x_w) + 30.0


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


class ConfigError(ValueError):
    """Raised for out-of-range or unknown configuration values."""


@dataclass(frozen=True)
class SystemConfig:
    """Immutable simulation configuration.

    The intended operating regime has pilot_len < min(num_dl, num_ul); smaller
    UE counts are still accepted (pilot assignment degenerates to distinct
    pilots), since sweeps deliberately cross that boundary.
    """

    num_aps: int = 64            # M
    antennas_per_ap: int = 2     # uniform antenna count per AP
    num_dl: int = 10             # K downlink UEs
    num_ul: int = 10             # L uplink UEs
    pilot_len: int = 8           # tau, number of orthogonal pilots
    radius_m: float = 1000.0     # deployment disc radius
    bandwidth_hz: float = 10e6
    noise_power_w: float = dbm_to_watts(-104.0)   # same value at APs and UEs
    rsi: float = db_to_linear(-110.0)             # residual SI power ratio, in [0, 1)
    rician_factor_db: float = 5.0                 # SI loop-channel K-factor
    shadow_std_db: float = 8.0
    total_ap_power_w: float = dbm_to_watts(43.0)  # summed over all APs
    ul_power_max_w: float = dbm_to_watts(23.0)    # per UL UE
    train_power_w: float = dbm_to_watts(23.0)     # uplink training power (defaults to the UL budget)
    rate_floor_dl: float = 0.5   # bits/s/Hz per DL UE
    rate_floor_ul: float = 0.5   # bits/s/Hz per UL UE
    coherence_symbols: int = 200
    training_symbols: int | None = None  # None: derived from duplex mode (2*tau FD, tau HD)
    assoc_threshold: float | None = None  # None: 1e-3 / num_aps
    rng_seed: int = 1
    sca_tol: float = 1e-3
    solver_tol: float = 1e-8

    # -- derived quantities -------------------------------------------------

    @property
    def n_total(self) -> int:
        """Total antenna count across APs."""
        return self.num_aps * self.antennas_per_ap

    @property
    def ap_power_max_w(self) -> float:
        """Per-AP power budget (equal split of the total)."""
        return self.total_ap_power_w / self.num_aps

    @property
    def assoc_threshold_value(self) -> float:
        if self.assoc_threshold is not None:
            return self.assoc_threshold
        return 1e-3 / self.num_aps

    def training_symbols_for(self, duplex: str) -> int:
        """Training length: two phases under FD, one joint phase under HD."""
        if self.training_symbols is not None:
            return self.training_symbols
        if duplex == "fd":
            return 2 * self.pilot_len
        if duplex == "hd":
            return self.pilot_len
        raise ConfigError(f"unknown duplex mode {duplex!r}")

    # -- validation / (de)serialization -------------------------------------

    def validate(self) -> "SystemConfig":
        if self.num_aps < 1 or self.antennas_per_ap < 1:
            raise ConfigError("need at least one AP and one antenna per AP")
        if self.num_dl < 0 or self.num_ul < 0:
            raise ConfigError("UE counts must be non-negative")
        if self.pilot_len < 1:
            raise ConfigError("pilot_len must be at least 1")
        if not 0.0 <= self.rsi < 1.0:
            raise ConfigError("rsi must lie in [0, 1)")
        for name in ("noise_power_w", "total_ap_power_w", "ul_power_max_w", "train_power_w"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.radius_m < 0.0:
            raise ConfigError("radius_m must be non-negative")
        if self.shadow_std_db < 0.0:
            raise ConfigError("shadow_std_db must be non-negative")
        if self.rate_floor_dl < 0.0 or self.rate_floor_ul < 0.0:
            raise ConfigError("rate floors must be non-negative")
        if self.training_symbols is not None and self.training_symbols >= self.coherence_symbols:
            raise ConfigError("training_symbols must be smaller than coherence_symbols")
        if 2 * self.pilot_len >= self.coherence_symbols:
            raise ConfigError("2*pilot_len must stay below coherence_symbols")
        if self.assoc_threshold is not None and self.assoc_threshold <= 0.0:
            raise ConfigError("assoc_threshold must be positive")
        if self.sca_tol <= 0.0 or self.solver_tol <= 0.0:
            raise ConfigError("tolerances must be positive")
        return self

    def replace(self, **kwargs) -> "SystemConfig":
        return dataclasses.replace(self, **kwargs).validate()

    def to_mapping(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, data: dict) -> "SystemConfig":
        known = set(cls.field_names())
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_yaml(cls, path: str) -> "SystemConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        return cls.from_mapping(data)

    def to_yaml(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_mapping(), fh, sort_keys=True)

    def config_hash(self) -> str:
        """Short stable digest of the full configuration, for CSV headers."""
        blob = json.dumps(self.to_mapping(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]
