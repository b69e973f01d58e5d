"""Pytest configuration and fixtures for surfstokes tests."""
import os
import sys

import pytest

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from levelset_geometry import biconcave, sphere  # noqa: E402
from parametric_surface import build_curved  # noqa: E402
from surface_mesh import build_base_mesh  # noqa: E402


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch, tmp_path):
    """Keep run logs out of the repo and ignore the caller's SURFSTOKES_* settings."""
    for name in list(os.environ):
        if name.startswith("SURFSTOKES_"):
            monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("SURFSTOKES_LOG_DIR", str(tmp_path / "logs"))
    yield


@pytest.fixture(scope="session")
def unit_sphere():
    return sphere(1.0)


@pytest.fixture(scope="session")
def rbc_field():
    return biconcave(0.95, 0.96)


@pytest.fixture(scope="session")
def sphere_mesh(unit_sphere):
    """80 triangles: icosphere level 1 on the unit sphere."""
    return build_base_mesh(unit_sphere, 0, base_level=1)


@pytest.fixture(scope="session")
def sphere_mesh_fine(unit_sphere):
    return build_base_mesh(unit_sphere, 1, base_level=1)


@pytest.fixture(scope="session")
def rbc_mesh(rbc_field):
    return build_base_mesh(rbc_field, 0, base_level=1)


@pytest.fixture(scope="session")
def sphere_surface2(sphere_mesh, unit_sphere):
    return build_curved(sphere_mesh, unit_sphere, 2)


@pytest.fixture(scope="session")
def sphere_surface3(sphere_mesh_fine, unit_sphere):
    return build_curved(sphere_mesh_fine, unit_sphere, 3)
