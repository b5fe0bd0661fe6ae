import json
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from echotrace.materials import AcousticMaterial
from echotrace.params import SimulationParams
from echotrace.scene import box_mesh, build_scene

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BOX = (4.0, 3.0, 2.5)
SOURCE = (1.0, 1.0, 1.2)
LISTENER = (2.7, 2.1, 1.5)


@pytest.fixture(scope="session")
def frozen():
    return json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


def shoebox_scene(absorption=0.2, scattering=0.0, size=BOX, transmission=0.0):
    return build_scene(box_mesh(size), AcousticMaterial.uniform("wall", absorption, scattering, transmission))


def quick_params(**kw):
    """Small ray budget with the oracle-incompatible stages off."""
    base = dict(num_source_rays=4096, num_listener_rays=4096, pool_paths=1024, max_ir_seconds=0.5,
                diffraction_enabled=False, transmission_enabled=False, air_enabled=False)
    base.update(kw)
    return SimulationParams(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
