"""WAV, JSON sidecar, trajectory and report files."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .audio import AudioClip, Trajectory
from .errors import ConfigurationError, InvalidInputError

SIDECAR_SCHEMA = "echotrace.sidecar/1"


def _samples(obj):
    return np.atleast_2d(np.asarray(getattr(obj, "channels", getattr(obj, "samples", obj)), dtype=float))


def write_wav(path, data, sampling_rate=None):
    """Write an IR, clip or (C, N) array as 32-bit float WAV."""
    rate = sampling_rate or getattr(data, "sampling_rate", None)
    if rate is None:
        raise InvalidInputError("sampling rate required")
    x = _samples(data).astype(np.float32)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(rate), x.T if x.shape[0] > 1 else x[0])
    return Path(path)


def read_wav(path):
    """Read float-32 or PCM-16 WAV as an AudioClip (PCM scaled to [-1, 1))."""
    try:
        rate, x = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read WAV {path}: {exc}") from exc
    if x.dtype == np.int16:
        x = x.astype(float) / 32768.0
    elif x.dtype in (np.float32, np.float64):
        x = x.astype(float)
    else:
        raise ConfigurationError(f"unsupported WAV sample format {x.dtype}; expected float32 or PCM-16")
    x = x[None, :] if x.ndim == 1 else x.T
    return AudioClip(rate, x)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    raise TypeError(f"not JSON serializable: {type(v)!r}")


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps(obj) + "\n")
    return Path(path)


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc


def sidecar_path(wav_path):
    return Path(wav_path).with_suffix(".json")


def make_sidecar(params, layout, n_channels, job, **extra):
    """Metadata needed to re-run a render: job config, full params and their hash."""
    d = {
        "schema": SIDECAR_SCHEMA,
        "layout": layout,
        "n_channels": int(n_channels),
        "sampling_rate": params.sampling_rate,
        "seed": params.rng_seed,
        "params_sha256": params.digest(),
        "params": params.to_dict(),
        "job": job,
    }
    d.update(extra)
    return d


def load_trajectory(path, step=None, crossfade=0.05, default_step=None):
    """Trajectory from 'time x y z heading_deg' lines (# comments and blank lines ignored).

    ``default_step`` is used when the file holds a single pose.
    """
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read trajectory {path}: {exc}") from exc
    rows = []
    for n, line in enumerate(lines, 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        if len(parts) != 5:
            raise ConfigurationError(f"{path}:{n}: expected 'time x y z heading_deg'")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ConfigurationError(f"{path}:{n}: non-numeric field") from None
    if not rows:
        raise ConfigurationError(f"trajectory {path} is empty")
    a = np.array(rows)
    if step is None and len(a) == 1:
        step = default_step
    try:
        return Trajectory(a[:, 0], a[:, 1:4], np.deg2rad(a[:, 4]), step, crossfade)
    except InvalidInputError as exc:
        raise ConfigurationError(f"invalid trajectory {path}: {exc}") from exc


def write_trajectory(path, trajectory):
    with open(path, "w") as f:
        for t, p, h in zip(trajectory.times, trajectory.positions, trajectory.headings):
            f.write(" ".join(repr(float(v)) for v in (t, *p, math.degrees(h))) + "\n")
    return Path(path)


def write_edc_csv(path, edc):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time_s", "edc_db"])
        for t, d in zip(edc.times, edc.db):
            w.writerow([f"{t:.9g}", f"{d:.6f}" if np.isfinite(d) else "-inf"])
    return Path(path)
