import os

import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)


class AnalyticField:
    """Stand-in exposing the ``sdf`` / ``bounds`` / ``finest_voxel`` contract."""

    def __init__(self, fn, lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0), voxel=0.03, inv_s=200.0):
        self.fn = fn
        self.inv_s = torch.tensor(inv_s, dtype=torch.float64)
        self._lo = np.asarray(lo, float)
        self._hi = np.asarray(hi, float)
        self.finest_voxel = voxel

    @property
    def bounds(self):
        return self._lo, self._hi

    def sdf(self, x):
        x = torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x, dtype=torch.float64).reshape(-1, 3)
        return self.fn(x)

    def pr_density(self, x):
        from rgbdsurf.renderer import volume_density

        return volume_density(self.sdf(x), self.inv_s)

    def decode(self, x, view_dir):
        from rgbdsurf.field import FieldOutput

        sdf = self.sdf(x)
        grey = torch.full((sdf.shape[0], 3), 0.5, dtype=torch.float64)
        return FieldOutput(sdf, grey, grey, sdf[:, None], torch.zeros_like(sdf, dtype=torch.bool))


def sphere_sdf(radius=0.5, center=(0.0, 0.0, 0.0)):
    c = torch.tensor(center, dtype=torch.float64)
    return lambda x: torch.linalg.norm(x - c, dim=-1) - radius


@pytest.fixture
def sphere_field():
    return AnalyticField(sphere_sdf())


@pytest.fixture
def plane_field():
    return AnalyticField(lambda x: x[:, 0].clone())


@pytest.fixture(scope="session")
def tiny_scene(tmp_path_factory):
    """A small noisy room rendered once per session."""
    from rgbdsurf import dataio

    spec = dataio.box_room_spec(n_frames=4, width=32, height=24, gt_resolution=0.04)
    out = tmp_path_factory.mktemp("scene")
    ds = dataio.generate_synthetic(spec, out, np.random.default_rng(0))
    return spec, out, ds


# acceptance summary -------------------------------------------------------------

ACCEPTANCE: dict = {}


def record_criterion(n: int, passed: bool, detail: str) -> str:
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
