"""Acoustic materials, frequency bands and air absorption.

Coefficients are stored in the flat ``[f1, c1, f2, c2, ...]`` layout used by
material configuration files and interpolated linearly in log-frequency.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidInputError

log = logging.getLogger(__name__)

KINDS = ("absorption", "scattering", "transmission", "damping")
KIND_DEFAULTS = {"absorption": 0.1, "scattering": 0.5, "transmission": 0.0, "damping": 0.0}
MATERIALS_SCHEMA = "echotrace.materials/1"


@dataclass(frozen=True)
class FrequencyBands:
    """Log-spaced band centres in Hz; edges are geometric midpoints."""

    centers: tuple

    def __post_init__(self):
        c = tuple(float(f) for f in self.centers)
        if len(c) < 1:
            raise InvalidInputError("at least one frequency band is required")
        if any(f <= 0 for f in c) or any(b <= a for a, b in zip(c, c[1:])):
            raise InvalidInputError("band centres must be positive and strictly increasing")
        object.__setattr__(self, "centers", c)

    @classmethod
    def octaves(cls, count=8, lowest=62.5):
        return cls(tuple(lowest * 2.0**k for k in range(count)))

    @property
    def count(self):
        return len(self.centers)

    @property
    def edges(self):
        """Inner band edges (``count - 1`` values)."""
        c = np.asarray(self.centers)
        return np.sqrt(c[:-1] * c[1:])

    def as_array(self):
        return np.asarray(self.centers, dtype=float)


def _pairs(values, kind):
    """Normalise a flat list or a list of pairs into a tuple of (f, c) pairs."""
    if values is None:
        return ()
    values = list(values)
    if values and not isinstance(values[0], (list, tuple)):
        if len(values) % 2:
            raise ConfigurationError(f"{kind}: flat coefficient list must have even length")
        values = list(zip(values[0::2], values[1::2]))
    pairs = tuple((float(f), float(c)) for f, c in values)
    freqs = [f for f, _ in pairs]
    if any(f <= 0 for f in freqs) or any(b <= a for a, b in zip(freqs, freqs[1:])):
        raise ConfigurationError(f"{kind}: frequencies must be positive and strictly increasing")
    for _, c in pairs:
        if not math.isfinite(c) or c < 0 or (kind != "damping" and c > 1):
            raise ConfigurationError(f"{kind}: coefficient {c} out of range")
    return pairs


@dataclass(frozen=True)
class AcousticMaterial:
    name: str
    absorption: tuple = ()
    scattering: tuple = ()
    transmission: tuple = ()
    damping: tuple = ()

    def __post_init__(self):
        for kind in KINDS:
            object.__setattr__(self, kind, _pairs(getattr(self, kind), kind))
        probe = sorted({f for kind in ("absorption", "transmission") for f, _ in getattr(self, kind)})
        for f in probe:
            a = coefficient_at(self, "absorption", f)
            t = coefficient_at(self, "transmission", f)
            if a + t > 1.0 + 1e-9:
                raise ConfigurationError(
                    f"material {self.name!r}: absorption + transmission = {a + t:.3f} > 1 at {f:g} Hz")

    @classmethod
    def uniform(cls, name, absorption=0.1, scattering=0.0, transmission=0.0, damping=0.0):
        """Frequency-independent material; handy for tests and validation rooms."""
        return cls(name, ((1000.0, absorption),), ((1000.0, scattering),),
                   ((1000.0, transmission),), ((1000.0, damping),))

    def to_dict(self):
        return {kind: [x for pair in getattr(self, kind) for x in pair] for kind in KINDS
                if getattr(self, kind)}

    @classmethod
    def from_dict(cls, name, data):
        unknown = set(data) - set(KINDS)
        if unknown:
            raise ConfigurationError(f"material {name!r}: unknown fields {sorted(unknown)}")
        return cls(name, **{kind: data.get(kind, ()) for kind in KINDS})


def coefficient_at(material, kind, frequency):
    """Coefficient of ``kind`` at ``frequency``, linear in log-frequency.

    Values beyond the listed range are held constant; an empty list falls back
    to the kind's default (absorption 0.1, scattering 0.5, transmission and
    damping 0).
    """
    if kind not in KINDS:
        raise InvalidInputError(f"unknown coefficient kind {kind!r}")
    if frequency <= 0:
        raise InvalidInputError("frequency must be positive")
    pairs = getattr(material, kind)
    if not pairs:
        return KIND_DEFAULTS[kind]
    logf = [math.log(f) for f, _ in pairs]
    return float(np.interp(math.log(frequency), logf, [c for _, c in pairs]))


@functools.lru_cache(maxsize=4096)
def _band_coefficients(material, kind, bands):
    return np.array([coefficient_at(material, kind, f) for f in bands.centers])


def band_coefficients(material, kind, bands):
    """Per-band coefficients at the band centres (cached, read-only array)."""
    out = _band_coefficients(material, kind, bands)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MaterialDatabase:
    materials: Mapping[str, AcousticMaterial]
    category_to_material: Mapping[str, tuple] = field(default_factory=dict)
    default_material: str = ""

    def __post_init__(self):
        if not self.materials:
            raise ConfigurationError("material database is empty")
        default = self.default_material or next(iter(self.materials))
        if default not in self.materials:
            raise ConfigurationError(f"default material {default!r} is not defined")
        object.__setattr__(self, "default_material", default)
        mapping = {}
        for label, candidates in self.category_to_material.items():
            candidates = (candidates,) if isinstance(candidates, str) else tuple(candidates)
            if not candidates:
                raise ConfigurationError(f"category {label!r} has no candidate materials")
            for name in candidates:
                if name not in self.materials:
                    raise ConfigurationError(f"category {label!r} maps to unknown material {name!r}")
            mapping[label] = candidates
        object.__setattr__(self, "category_to_material", mapping)

    def __getitem__(self, name):
        return self.materials[name]

    def __len__(self):
        return len(self.materials)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"schema", "source", "materials", "category_to_material", "default_material"}
        if unknown:
            raise ConfigurationError(f"material config: unknown fields {sorted(unknown)}")
        schema = data.get("schema", MATERIALS_SCHEMA)
        if schema != MATERIALS_SCHEMA:
            raise ConfigurationError(f"unsupported material schema {schema!r}")
        if "materials" not in data:
            raise ConfigurationError("material config has no 'materials' section")
        mats = {name: AcousticMaterial.from_dict(name, d) for name, d in data["materials"].items()}
        return cls(mats, data.get("category_to_material", {}), data.get("default_material", ""))

    def to_dict(self):
        return {
            "schema": MATERIALS_SCHEMA,
            "default_material": self.default_material,
            "materials": {name: m.to_dict() for name, m in self.materials.items()},
            "category_to_material": {k: list(v) for k, v in self.category_to_material.items()},
        }


def load_material_database(path=None):
    """Load a JSON material configuration; ``None`` loads the built-in database."""
    if path is None:
        text = resources.files("echotrace").joinpath("data/materials.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read material config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"material config is not valid JSON: {exc}") from exc
    return MaterialDatabase.from_dict(data)


@functools.lru_cache(maxsize=1)
def builtin_database():
    return load_material_database(None)


@dataclass(frozen=True)
class MaterialTable:
    """Resolved per-triangle material assignment.

    ``materials`` holds each distinct resolved material once; ``indices`` maps
    triangles into it.
    """

    materials: tuple
    indices: np.ndarray
    unknown_categories: int = 0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.materials)):
            raise ConfigurationError("material index out of range")
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "materials", tuple(self.materials))

    @classmethod
    def single(cls, material, n_triangles):
        return cls((material,), np.zeros(n_triangles, dtype=np.int64))

    def material_of(self, triangle):
        return self.materials[int(self.indices[triangle])]


def _perturb(material, rng, sigma, uniform):
    """Randomised copy of ``material`` (Gaussian noise or uniform resampling)."""
    def jitter(pairs):
        out = []
        for f, c in pairs:
            v = rng.uniform(0.0, 1.0) if uniform else c + rng.normal(0.0, sigma)
            out.append((f, float(min(1.0, max(0.0, v)))))
        return tuple(out)

    absorption = jitter(material.absorption or ((1000.0, KIND_DEFAULTS["absorption"]),))
    scattering = jitter(material.scattering or ((1000.0, KIND_DEFAULTS["scattering"]),))
    transmission = jitter(material.transmission) if material.transmission else ()
    # keep absorption + transmission <= 1 by trimming transmission
    if transmission:
        def at(pairs, f):
            return float(np.interp(math.log(f), [math.log(x) for x, _ in pairs], [c for _, c in pairs]))

        transmission = tuple((f, min(c, 1.0 - at(absorption, f))) for f, c in transmission)
        grid = sorted({f for f, _ in absorption})
        worst = max((at(absorption, f) + at(transmission, f) for f in grid), default=0.0)
        if worst > 1.0:
            transmission = tuple((f, max(0.0, c - (worst - 1.0))) for f, c in transmission)
    return replace(material, absorption=absorption, scattering=scattering, transmission=transmission)


def resolve_assignment(db, categories, policy="fixed", seed=None, noise_sigma=0.1, uniform=False):
    """Map per-triangle category labels to materials.

    ``fixed`` takes the first candidate of each category. ``randomized`` draws
    one candidate per category for the whole call, then adds N(0, noise_sigma)
    noise to every absorption/scattering/transmission coefficient and clamps to
    [0, 1]. With ``uniform=True`` coefficients are instead drawn from U[0, 1]
    (the ablation baseline). Unknown or missing labels get the default material.
    """
    if policy not in ("fixed", "randomized"):
        raise ConfigurationError(f"unknown assignment policy {policy!r}")
    if policy == "randomized" and seed is None:
        raise ConfigurationError("randomized assignment requires a seed")
    labels = [c if c is not None else "" for c in categories]
    rng = np.random.default_rng(seed) if policy == "randomized" else None
    resolved = {}
    unknown = 0
    for label in sorted(set(labels)):
        candidates = db.category_to_material.get(label)
        if candidates is None:
            if label:
                log.warning("unknown category %r: using default material %r", label, db.default_material)
            unknown += labels.count(label)
            candidates = (db.default_material,)
        if rng is None:
            resolved[label] = db[candidates[0]]
        else:
            choice = db[candidates[int(rng.integers(len(candidates)))]]
            resolved[label] = _perturb(choice, rng, noise_sigma, uniform)
    order = sorted(resolved)
    index = {label: i for i, label in enumerate(order)}
    table = MaterialTable(tuple(resolved[label] for label in order),
                          np.array([index[label] for label in labels], dtype=np.int64), unknown)
    return table


@dataclass(frozen=True)
class AirModel:
    temperature: float = 20.0
    humidity: float = 50.0
    pressure: float = 101.325

    def __post_init__(self):
        if not -20.0 <= self.temperature <= 50.0:
            raise InvalidInputError("temperature must lie in [-20, 50] degC")
        if not 0.0 <= self.humidity <= 100.0:
            raise InvalidInputError("relative humidity must lie in [0, 100] %")
        if not self.pressure > 0:
            raise InvalidInputError("pressure must be positive")

    def speed_of_sound(self):
        return 331.3 * math.sqrt(1.0 + self.temperature / 273.15)


def air_attenuation(air, frequency):
    """Pure-tone atmospheric attenuation in dB/m (ISO 9613-1)."""
    f = np.asarray(frequency, dtype=float)
    if np.any(f < 20.0) or np.any(f > 40000.0):
        raise InvalidInputError("frequency must lie in [20, 40000] Hz")
    T = air.temperature + 273.15
    T0, T01, pr = 293.15, 273.16, 101.325
    pa = air.pressure
    psat = pr * 10.0 ** (-6.8346 * (T01 / T) ** 1.261 + 4.6151)
    h = air.humidity * psat / pa
    frO = pa / pr * (24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h))
    frN = pa / pr * (T / T0) ** -0.5 * (9.0 + 280.0 * h * math.exp(-4.170 * ((T / T0) ** (-1.0 / 3.0) - 1.0)))
    alpha = 8.686 * f**2 * (
        1.84e-11 * (pr / pa) * (T / T0) ** 0.5
        + (T / T0) ** -2.5 * (0.01275 * math.exp(-2239.1 / T) / (frO + f**2 / frO)
                              + 0.1068 * math.exp(-3352.0 / T) / (frN + f**2 / frN)))
    return float(alpha) if alpha.ndim == 0 else alpha


def band_air_attenuation(air, bands):
    """Attenuation in dB/m at each band centre; centres above 40 kHz are clipped."""
    return np.array([air_attenuation(air, min(max(f, 20.0), 40000.0)) for f in bands.centers])
