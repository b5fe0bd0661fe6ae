"""Simulation parameters, presets and their JSON form."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigurationError, InvalidInputError
from .materials import AirModel, FrequencyBands

PARAMS_SCHEMA = "echotrace.params/1"
MODES = ("high_quality", "high_speed")
HIGH_SPEED_RAY_FACTOR = 8


@dataclass(frozen=True)
class SimulationParams:
    """Every knob of a simulation.

    Ray counts default to the high-quality budget; ``preset("high_speed")``
    divides source and listener rays by eight. ``receiver_radius`` of None
    selects ``0.9 * distance to the nearest surface`` clamped to [0.05, 0.5] m.
    """

    sampling_rate: int = 44100
    band_count: int = 8
    lowest_band: float = 62.5
    direct_sh_order: int = 3
    indirect_sh_order: int = 1
    num_direct_rays: int = 5000
    num_source_rays: int = 65536
    max_source_depth: int = 64
    num_listener_rays: int = 65536
    max_listener_depth: int = 8
    pool_paths: int = 4096
    max_ir_seconds: float = 2.0
    direct_enabled: bool = True
    indirect_enabled: bool = True
    diffraction_enabled: bool = True
    transmission_enabled: bool = True
    air_enabled: bool = True
    temperature: float = 20.0
    humidity: float = 50.0
    pressure: float = 101.325
    speed_of_sound: Optional[float] = None
    mode: str = "high_quality"
    path_cache: bool = False
    thread_count: int = 1
    rng_seed: int = 0
    energy_cutoff: float = 1e-4
    receiver_radius: Optional[float] = None
    histogram_bin_samples: int = 1
    initial_pressure: float = 1.0
    unit_scale: float = 1.0
    time_step: float = 0.15
    crossfade: float = 0.05
    custom_materials: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 8000 <= self.sampling_rate <= 192000:
            raise InvalidInputError("sampling_rate must lie in [8000, 192000] Hz")
        if self.band_count < 1:
            raise InvalidInputError("band_count must be >= 1")
        if self.direct_sh_order < 0 or self.indirect_sh_order < 0:
            raise InvalidInputError("SH orders must be non-negative")
        if not self.max_ir_seconds > 0:
            raise InvalidInputError("max_ir_seconds must be positive")
        if self.direct_enabled and self.num_direct_rays < 1:
            raise InvalidInputError("num_direct_rays must be >= 1 when direct sound is enabled")
        if self.indirect_enabled:
            if self.num_source_rays < 1 or self.num_listener_rays < 1:
                raise InvalidInputError("ray counts must be >= 1 when indirect sound is enabled")
            if self.max_source_depth < 1 or self.max_listener_depth < 1:
                raise InvalidInputError("path depths must be >= 1")
        if self.max_source_depth > 1024 or self.max_listener_depth > 1024:
            raise InvalidInputError("path depth is limited to 1024")
        if self.pool_paths < 1:
            raise InvalidInputError("pool_paths must be >= 1")
        if self.thread_count < 1:
            raise InvalidInputError("thread_count must be >= 1")
        if not 0 < self.energy_cutoff < 1:
            raise InvalidInputError("energy_cutoff must lie in (0, 1)")
        if self.receiver_radius is not None and not self.receiver_radius > 0:
            raise InvalidInputError("receiver_radius must be positive")
        if self.speed_of_sound is not None and not self.speed_of_sound > 0:
            raise InvalidInputError("speed_of_sound must be positive")
        if self.histogram_bin_samples < 1:
            raise InvalidInputError("histogram_bin_samples must be >= 1")
        if not self.initial_pressure >= 0:
            raise InvalidInputError("initial_pressure must be non-negative")
        if not self.unit_scale > 0:
            raise InvalidInputError("unit_scale must be positive")
        if not 0 <= self.crossfade < self.time_step:
            raise InvalidInputError("crossfade window must be shorter than the time step")
        if self.rng_seed < 0:
            raise InvalidInputError("rng_seed must be non-negative")
        self.air  # validates temperature / humidity

    @property
    def bands(self):
        return FrequencyBands.octaves(self.band_count, self.lowest_band)

    @property
    def air(self):
        return AirModel(self.temperature, self.humidity, self.pressure)

    @property
    def n_bins(self):
        return int(round(self.max_ir_seconds * self.sampling_rate)) // self.histogram_bin_samples

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = {"schema": PARAMS_SCHEMA}
        d.update(dataclasses.asdict(self))
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        schema = data.pop("schema", PARAMS_SCHEMA)
        if schema != PARAMS_SCHEMA:
            raise ConfigurationError(f"unsupported params schema {schema!r}")
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names - {"preset"}
        if unknown:
            raise ConfigurationError(f"unknown params fields {sorted(unknown)}")
        base = cls()
        if "preset" in data:
            base = apply_preset(base, data.pop("preset"))
        try:
            return dataclasses.replace(base, **data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self):
        """sha256 of the canonical JSON form (thread count excluded: it never changes results)."""
        d = self.to_dict()
        d.pop("thread_count")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def preset(mode):
    """Parameter overrides for a rendering mode."""
    hq = SimulationParams()
    if mode == "high_quality":
        return {"mode": "high_quality", "num_source_rays": hq.num_source_rays,
                "num_listener_rays": hq.num_listener_rays, "pool_paths": hq.pool_paths,
                "path_cache": False}
    if mode == "high_speed":
        return {"mode": "high_speed",
                "num_source_rays": hq.num_source_rays // HIGH_SPEED_RAY_FACTOR,
                "num_listener_rays": hq.num_listener_rays // HIGH_SPEED_RAY_FACTOR,
                "pool_paths": hq.pool_paths // HIGH_SPEED_RAY_FACTOR}
    raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")


def apply_preset(params, mode, **overrides):
    changes = preset(mode)
    changes.update(overrides)
    return dataclasses.replace(params, **changes)


def load_params(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read params file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"params file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("params file must hold a JSON object")
    return SimulationParams.from_dict(data)


def default_thread_count():
    """ECHOTRACE_THREADS if set, else 1."""
    raw = os.environ.get("ECHOTRACE_THREADS")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"ECHOTRACE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("ECHOTRACE_THREADS must be >= 1")
    return n
