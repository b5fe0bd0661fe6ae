"""Command-line interface: render-ir, render-trajectory, metrics, validate, gen-dataset.

Exit codes: 0 success, 2 configuration error, 3 simulation error, 4 validation failure.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import io as eio
from . import metrics
from .errors import ConfigurationError, EchotraceError, InvalidInputError, SimulationError
from .materials import AcousticMaterial, load_material_database, resolve_assignment
from .params import SimulationParams, default_thread_count, load_params
from .scene import box_mesh, build_scene, load_mesh, nearest_surface_distance

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_VALIDATION = 4
JOB_SCHEMA = "echotrace.job/1"
DATASET_SCHEMA = "echotrace.dataset/1"
DATASET_HEIGHT = 1.5
MIN_SOURCE_DISTANCE = 0.5
PLACEMENT_MARGIN = 0.25
MAX_PLACEMENT_TRIES = 10000

log = logging.getLogger("echotrace")


class ValidationFailed(Exception):
    pass


@dataclass
class JobConfig:
    """One render job; the JSON form is what sidecars store."""

    scene: str
    source: Optional[list] = None
    listener: Optional[list] = None
    heading_deg: float = 0.0
    materials: Optional[str] = None
    material: Optional[dict] = None  # uniform material coefficients, overrides ``materials``
    category_file: Optional[str] = None
    material_policy: str = "fixed"
    params: dict = field(default_factory=dict)
    preset: Optional[str] = None
    mic: dict = field(default_factory=lambda: {"kind": "mono"})
    seed: int = 0
    trajectory: Optional[str] = None
    audio: Optional[str] = None
    schema: str = JOB_SCHEMA

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get("schema", JOB_SCHEMA) != JOB_SCHEMA:
            raise ConfigurationError(f"unsupported job schema {data.get('schema')!r}")
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown job fields {sorted(unknown)}")
        if "scene" not in data:
            raise ConfigurationError("job config needs a 'scene'")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)


def load_job(path):
    """Job config or a render sidecar (whose 'job' entry is re-run as is)."""
    data = eio.read_json(path)
    if not isinstance(data, dict):
        raise ConfigurationError("job config must be a JSON object")
    if data.get("schema") == eio.SIDECAR_SCHEMA:
        data = data["job"]
    return JobConfig.from_dict(data)


# ---------------------------------------------------------------- job resolution

def _absolute(path):
    if path is None or str(path).startswith("shoebox:"):
        return path
    return str(Path(path).resolve())


def load_scene_mesh(spec, unit_scale=1.0, category_file=None):
    """Mesh from an OBJ path or 'shoebox:LxWxH'."""
    if spec.startswith("shoebox:"):
        try:
            size = [float(x) for x in spec[len("shoebox:"):].lower().split("x")]
        except ValueError:
            raise ConfigurationError(f"bad shoebox spec {spec!r}; expected shoebox:LxWxH") from None
        if len(size) != 3:
            raise ConfigurationError(f"bad shoebox spec {spec!r}; expected shoebox:LxWxH")
        return box_mesh([s * unit_scale for s in size])
    if not Path(spec).is_file():
        raise ConfigurationError(f"scene file not found: {spec}")
    return load_mesh(spec, unit_scale, category_file)


def resolve_params(job, threads=None):
    data = dict(job.params)
    data.pop("schema", None)
    if job.preset is not None:
        data["preset"] = job.preset
    params = SimulationParams.from_dict(data)
    mic = job.mic or {}
    changes = {"rng_seed": int(job.seed), "thread_count": threads or default_thread_count()}
    if mic.get("kind") == "ambisonics":
        changes["indirect_sh_order"] = max(params.indirect_sh_order, int(mic.get("order", 1)))
    return params.replace(**changes)


def resolve_scene(job, params):
    mesh = load_scene_mesh(job.scene, params.unit_scale, job.category_file)
    if job.material is not None:
        try:
            mat = AcousticMaterial.uniform("uniform", **job.material)
        except TypeError as exc:
            raise ConfigurationError(f"bad uniform material: {exc}") from None
        return build_scene(mesh, mat, params.speed_of_sound or 343.0)
    db = load_material_database(job.materials)
    cats = mesh.categories or (None,) * mesh.n_triangles
    seed = job.seed if job.material_policy == "randomized" else None
    table = resolve_assignment(db, cats, job.material_policy, seed=seed)
    return build_scene(mesh, table, params.speed_of_sound or 343.0)


def resolve_mic(job):
    from .spatial import MicrophoneConfig

    mic = dict(job.mic or {"kind": "mono"})
    unknown = set(mic) - {"kind", "order", "capsules"}
    if unknown:
        raise ConfigurationError(f"unknown mic fields {sorted(unknown)}")
    return MicrophoneConfig(mic.get("kind", "mono"), int(mic.get("order", 1)), tuple(map(tuple, mic.get("capsules", ()))))


def _point(value, name):
    if value is None:
        raise ConfigurationError(f"{name} position is required")
    p = np.asarray(value, dtype=float).reshape(-1)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ConfigurationError(f"{name} must be three finite coordinates")
    return p


def render_job_ir(job, threads=None):
    """(ImpulseResponse, params) for a job."""
    from .propagation import simulate
    from .spatial import render_array, spatialize

    params = resolve_params(job, threads)
    scene = resolve_scene(job, params)
    mic = resolve_mic(job)
    src = _point(job.source, "source")
    lis = _point(job.listener, "listener")
    yaw = math.radians(job.heading_deg)
    if mic.kind == "custom":
        return render_array(scene, src, lis, mic, params, yaw), params
    hist = simulate(scene, src, lis, params, orientation=yaw)
    return spatialize(hist, mic, rng_seed=params.rng_seed), params


def _finalize_job(job, params):
    """Job as stored in a sidecar: absolute paths and the fully resolved params."""
    d = job.to_dict()
    for key in ("scene", "materials", "category_file", "trajectory", "audio"):
        d[key] = _absolute(d[key])
    p = params.to_dict()
    p.pop("schema")
    p.pop("thread_count")
    d["params"] = p
    d["preset"] = None
    return d


# ---------------------------------------------------------------- click plumbing

def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationFailed as exc:
            click.echo(f"validation failed: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except (ConfigurationError, InvalidInputError) as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (SimulationError, EchotraceError) as exc:
            click.echo(f"simulation error: {exc}", err=True)
            sys.exit(EXIT_SIMULATION)
        except click.exceptions.ClickException:
            raise
        except Exception as exc:  # noqa: BLE001 - any other failure is a simulation failure
            click.echo(f"simulation error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_SIMULATION)
    return wrapper


def _parse_sets(items):
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _job_from_options(config, scene, materials, params_file, preset, seed, sets, absorption, scattering,
                      mic, order, **extra):
    if config:
        job = load_job(config)
    elif scene:
        job = JobConfig(scene=scene)
    else:
        raise ConfigurationError("either --config or --scene is required")
    if scene:
        job.scene = scene
    if materials:
        job.materials = materials
    if params_file:
        p = load_params(params_file).to_dict()
        p.pop("schema")
        job.params = {**job.params, **p}
    if sets:
        job.params = {**job.params, **_parse_sets(sets)}
    if preset:
        job.preset = preset
    if seed is not None:
        job.seed = seed
    if absorption is not None:
        job.material = {"absorption": absorption, "scattering": scattering if scattering is not None else 0.0}
    if mic:
        job.mic = {"kind": mic, "order": order}
    for k, v in extra.items():
        if v is not None and v != ():
            setattr(job, k, list(v) if isinstance(v, tuple) else v)
    return job


def common_options(fn):
    opts = [
        click.option("--config", type=click.Path(), help="Job config JSON (or a render sidecar to re-run)."),
        click.option("--scene", help="OBJ mesh path or shoebox:LxWxH."),
        click.option("--materials", type=click.Path(), help="Material database JSON (default: built-in)."),
        click.option("--params", "params_file", type=click.Path(), help="Simulation params JSON."),
        click.option("--preset", type=click.Choice(["high_quality", "high_speed"])),
        click.option("--set", "sets", multiple=True, metavar="KEY=VALUE", help="Override one param."),
        click.option("--seed", type=int),
        click.option("--threads", type=int, help="Worker threads (default $ECHOTRACE_THREADS or 1)."),
        click.option("--absorption", type=float, help="Use one uniform material with this absorption."),
        click.option("--scattering", type=float, help="Scattering of the uniform material."),
        click.option("--mic", type=click.Choice(["mono", "stereo", "binaural", "quad", "surround_5_1",
                                                 "surround_7_1", "ambisonics"])),
        click.option("--order", type=int, default=1, show_default=True, help="Ambisonic order."),
        click.option("--out", type=click.Path(), required=True),
    ]
    for o in reversed(opts):
        fn = o(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Geometric room acoustics from the command line."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(name)s: %(message)s")


@main.command("render-ir")
@common_options
@click.option("--source", nargs=3, type=float)
@click.option("--listener", nargs=3, type=float)
@click.option("--heading", "heading_deg", type=float, help="Listener heading, degrees anticlockwise from +x.")
@_exit_codes
def render_ir(out, threads, source, listener, heading_deg, **opts):
    """Render one IR to a float WAV plus a JSON sidecar."""
    job = _job_from_options(**opts, source=source, listener=listener, heading_deg=heading_deg)
    ir, params = render_job_ir(job, threads)
    path = eio.write_wav(out, ir)
    eio.write_json(eio.sidecar_path(path), eio.make_sidecar(params, ir.layout, ir.n_channels,
                                                            _finalize_job(job, params)))
    click.echo(str(path))


@main.command("render-trajectory")
@common_options
@click.option("--source", nargs=3, type=float)
@click.option("--trajectory", type=click.Path(), help="'time x y z heading_deg' per line.")
@click.option("--audio", type=click.Path(), help="Mono source WAV.")
@click.option("--dump-irs", type=click.Path(), help="Directory for per-step IRs and their metadata.")
@_exit_codes
def render_trajectory_cmd(out, threads, source, trajectory, audio, dump_irs, **opts):
    """Render a source signal heard along a listener trajectory."""
    from .audio import render_trajectory, resample, trajectory_irs

    job = _job_from_options(**opts, source=source, trajectory=trajectory, audio=audio)
    if not job.trajectory or not job.audio:
        raise ConfigurationError("render-trajectory needs --trajectory and --audio")
    params = resolve_params(job, threads)
    scene = resolve_scene(job, params)
    mic = resolve_mic(job)
    src = _point(job.source, "source")
    traj = eio.load_trajectory(job.trajectory, crossfade=params.crossfade, default_step=params.time_step)
    clip = eio.read_wav(job.audio)
    if clip.n_channels != 1:
        raise ConfigurationError("source audio must be mono")
    if clip.sampling_rate != params.sampling_rate:
        clip = resample(clip, params.sampling_rate)
    irs = trajectory_irs(scene, src, traj, params, mic)
    y = render_trajectory(clip, scene, src, traj, params, mic, irs=irs)
    path = eio.write_wav(out, y)
    steps = []
    if dump_irs:
        for i, (ir, t, p, h) in enumerate(zip(irs, traj.times, traj.positions, traj.headings)):
            f = eio.write_wav(Path(dump_irs) / f"step_{i:05d}.wav", ir)
            steps.append({"index": i, "time": t, "position": p, "heading_deg": math.degrees(h), "ir": f.name})
        eio.write_json(Path(dump_irs) / "steps.json", {"steps": steps})
    eio.write_json(eio.sidecar_path(path), eio.make_sidecar(params, irs[0].layout, y.n_channels,
                                                            _finalize_job(job, params), n_steps=len(traj)))
    click.echo(str(path))


@main.command("metrics")
@click.argument("irs", nargs=-1, required=True, type=click.Path())
@click.option("--compare", multiple=True, type=click.Path(), help="Reference IR set, paired with IRS in order.")
@click.option("--method", type=click.Choice(["T30", "T20"]), default="T30", show_default=True)
@click.option("--band", "bands", is_flag=True, help="Also report per-octave-band RT60.")
@click.option("--direct-window", type=float, default=2.5e-3, show_default=True)
@click.option("--edc-dir", type=click.Path(), help="Write each IR's EDC as CSV here.")
@click.option("--out", type=click.Path(), help="Report JSON path (default: stdout).")
@_exit_codes
def metrics_cmd(irs, compare, method, bands, direct_window, edc_dir, out):
    """RT60, DRR and EDC of IR files; relative RT60 error against --compare."""
    band_set = SimulationParams().bands if bands else None
    entries = []
    fits = []
    for f in irs:
        clip = eio.read_wav(f)
        x = clip.samples[0]
        s = metrics.summarize(x, clip.sampling_rate, band_set, method)
        d = metrics.drr(x, clip.sampling_rate, direct_window)
        entry = {"file": str(f), **s.to_dict()}
        entry.update({"drr": d.db if np.isfinite(d.db) else None, "direct_only": d.direct_only,
                      "direct_window": list(d.window)})
        entries.append(entry)
        fits.append(metrics.rt60(x, clip.sampling_rate, method))
        if edc_dir:
            Path(edc_dir).mkdir(parents=True, exist_ok=True)
            eio.write_edc_csv(Path(edc_dir) / (Path(f).stem + "_edc.csv"), s.edc)
    report = {"method": method, "irs": entries}
    if compare:
        if len(compare) != len(irs):
            raise ConfigurationError("--compare needs one reference IR per input IR")
        ref = []
        for f in compare:
            clip = eio.read_wav(f)
            ref.append(metrics.rt60(clip.samples[0], clip.sampling_rate, method))
        err = metrics.relative_rt60_error(fits, ref, method=method)
        pairs = [{"ir": str(a), "reference": str(b), "rt60": fa.rt60 if fa.valid else None,
                  "reference_rt60": fb.rt60 if fb.valid else None,
                  "error_percent": abs(fa.rt60 - fb.rt60) / fb.rt60 * 100.0 if fa.valid and fb.valid else None}
                 for a, b, fa, fb in zip(irs, compare, fits, ref)]
        report["relative_rt60_error"] = {"percent": err.percent, "n_valid": err.n_valid,
                                         "excluded": err.excluded, "pairs": pairs}
    text = eio.dumps(report)
    if out:
        Path(out).write_text(text + "\n")
    else:
        click.echo(text)


@main.command("validate")
@click.option("--suite", "suites", multiple=True, type=click.Choice(["shoebox", "decay", "continuity"]),
              help="Suites to run (default: all).")
@click.option("--rays", type=int, default=1_000_000, show_default=True, help="Source rays of the specular run.")
@click.option("--threads", type=int)
@click.option("--seed", type=int, default=0)
@click.option("--inject-bias", is_flag=True, help="Scale reflected pressure by sqrt(4 pi); the DRR check must fail.")
@_exit_codes
def validate(suites, rays, threads, seed, inject_bias):
    """Run validation suites; exit 4 when any check fails."""
    from .validation import SQRT_4PI, run_suite

    failed = 0
    for name in suites or ("shoebox", "decay", "continuity"):
        click.echo(f"[{name}]")
        for c in run_suite(name, rays=rays, threads=threads or default_thread_count(),
                           bias=SQRT_4PI if inject_bias else 1.0, seed=seed):
            click.echo(c.line())
            failed += not c.passed
    if failed:
        raise ValidationFailed(f"{failed} check(s) failed")


def _record_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def sample_placement(scene, rng, max_distance, height=DATASET_HEIGHT):
    """Listener pose and source at ``height`` above the floor with 0 < d <= max_distance.

    Returns (listener, heading, source, theta, d); theta is the source angle
    anticlockwise from the listener heading, in [0, 2 pi).
    """
    lo, hi = scene.bounds()
    z = lo[2] + height
    if z >= hi[2] - PLACEMENT_MARGIN:
        raise ConfigurationError("scene is lower than the placement height")

    def inside():
        for _ in range(MAX_PLACEMENT_TRIES):
            p = np.array([rng.uniform(lo[0] + PLACEMENT_MARGIN, hi[0] - PLACEMENT_MARGIN),
                          rng.uniform(lo[1] + PLACEMENT_MARGIN, hi[1] - PLACEMENT_MARGIN), z])
            if nearest_surface_distance(scene, p) >= PLACEMENT_MARGIN:
                return p
        raise SimulationError("no valid placement found inside the scene")

    for _ in range(MAX_PLACEMENT_TRIES):
        lis = inside()
        heading = rng.uniform(0.0, 2.0 * math.pi)
        src = inside()
        d = float(np.linalg.norm(src - lis))
        if MIN_SOURCE_DISTANCE <= d <= max_distance:
            theta = math.atan2(src[1] - lis[1], src[0] - lis[0]) - heading
            return lis, heading, src, theta % (2.0 * math.pi), d
    raise SimulationError(f"no source within {max_distance} m of a listener could be placed")


@main.command("gen-dataset")
@common_options
@click.option("--scenes", multiple=True, help="Additional scenes (OBJ or shoebox:LxWxH).")
@click.option("--count", type=int, default=10, show_default=True)
@click.option("--max-distance", type=float, default=5.0, show_default=True)
@_exit_codes
def gen_dataset(out, threads, scenes, count, max_distance, **opts):
    """Sample source/listener placements and render one IR per record."""
    from .propagation import simulate
    from .spatial import spatialize

    if count < 1:
        raise ConfigurationError("--count must be >= 1")
    if not max_distance > MIN_SOURCE_DISTANCE:
        raise ConfigurationError(f"--max-distance must exceed {MIN_SOURCE_DISTANCE} m")
    job = _job_from_options(**opts)
    master = int(job.seed)
    specs = [job.scene] + list(scenes)
    params = resolve_params(job, threads)
    mic = resolve_mic(job)
    if mic.kind == "custom":
        raise ConfigurationError("gen-dataset does not support custom arrays")
    built = []
    for spec in specs:
        j = dataclasses.replace(job, scene=spec)
        built.append(resolve_scene(j, params))
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(count):
        rseed = _record_seed(master, i)
        rng = np.random.default_rng(rseed)
        k = int(rng.integers(len(specs)))
        lis, heading, src, theta, d = sample_placement(built[k], rng, max_distance)
        p = params.replace(rng_seed=rseed)
        hist = simulate(built[k], src, lis, p, orientation=heading)
        ir = spatialize(hist, mic, rng_seed=rseed)
        name = f"ir_{i:05d}.wav"
        eio.write_wav(root / name, ir)
        rec = {"index": i, "ir": name, "scene": _absolute(specs[k]), "scene_index": k, "theta": theta,
               "distance": d, "listener": lis, "heading": heading, "source": src, "seed": rseed,
               "params_sha256": p.digest(), "layout": ir.layout}
        rjob = _finalize_job(dataclasses.replace(job, scene=specs[k], source=src.tolist(), listener=lis.tolist(),
                                                 heading_deg=math.degrees(heading), seed=rseed), p)
        eio.write_json(eio.sidecar_path(root / name),
                       eio.make_sidecar(p, ir.layout, ir.n_channels, rjob, record=rec))
        records.append(rec)
    eio.write_json(root / "manifest.json", {"schema": DATASET_SCHEMA, "seed": master, "count": count,
                                            "max_distance": max_distance, "height": DATASET_HEIGHT,
                                            "params_sha256": params.digest(), "records": records})
    click.echo(str(root / "manifest.json"))


if __name__ == "__main__":
    main()
