"""Geometric room acoustics simulation."""

from .audio import AudioClip, Trajectory, convolve, render_trajectory, resample
from .errors import ConfigurationError, EchotraceError, InvalidInputError, MeshFormatError, SimulationError
from .materials import (AcousticMaterial, AirModel, FrequencyBands, MaterialDatabase, MaterialTable,
                        load_material_database, resolve_assignment)
from .metrics import drr, relative_rt60_error, rt60, schroeder_edc, summarize
from .params import SimulationParams, apply_preset, load_params, preset
from .propagation import EnergyHistogram, PathCache, simulate
from .scene import Scene, TriangleMesh, box_mesh, build_scene, load_mesh
from .spatial import ImpulseResponse, MicrophoneConfig, render_array, spatialize

__version__ = "0.1.0"

__all__ = [
    "AcousticMaterial", "AirModel", "AudioClip", "ConfigurationError", "EchotraceError", "EnergyHistogram",
    "FrequencyBands", "ImpulseResponse", "InvalidInputError", "MaterialDatabase", "MaterialTable", "MeshFormatError",
    "MicrophoneConfig", "PathCache", "Scene", "SimulationError", "SimulationParams", "Trajectory", "TriangleMesh",
    "apply_preset", "box_mesh", "build_scene", "convolve", "drr", "load_material_database", "load_mesh",
    "load_params", "preset", "relative_rt60_error", "render_array", "render_trajectory", "resample",
    "resolve_assignment", "rt60", "schroeder_edc", "simulate", "spatialize", "summarize",
]
