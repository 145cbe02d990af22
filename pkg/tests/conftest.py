# -*- coding: utf-8 -*-
import math
import os

import numpy as np
import pytest

from asdl.config import AsdlConfig, loadConfig, presetPath
from asdl.features import StftConfig
from asdl.geometry import ArrayGeometry, CameraModel
from asdl.scene import SceneSpec, renderScene
from asdl.supervision import LabelTrack

BASE_DIR_PATH = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SAMPLE_RATE = 48000
CHUNK_SAMPLES = 96000
WIDTH = 2448


def pytest_addoption(parser):
    parser.addoption(
        "--slow", action="store_true", default=False, help="Run end-to-end training tests."
    )


def pytest_runtest_setup(item):
    if "slow" in item.keywords and not item.config.getvalue("slow"):
        return pytest.skip("Need --slow option to run.")


# ---------------------------------
#  Fixtures
# ---------------------------------


@pytest.fixture(scope="session")
def rig():
    return AsdlConfig(presetPath("rig"))


@pytest.fixture(scope="session")
def geometry(rig):
    return ArrayGeometry.fromConfig(rig)


@pytest.fixture(scope="session")
def camera():
    return CameraModel(fov=55.0, width=WIDTH, offset=0.0, view=5)


@pytest.fixture(scope="session")
def stftcfg():
    return StftConfig()


@pytest.fixture(scope="session")
def desk():
    return loadConfig(preset="desk")


@pytest.fixture(scope="session")
def broadside_clip(geometry):
    spec = SceneSpec(2.0, [(0.0, 0.0)], [(0.0, 2.0)], seed=3, name="broadside")
    return renderScene(spec, geometry)


@pytest.fixture(scope="session")
def angled_clip(geometry):
    spec = SceneSpec(2.0, [(0.0, 15.0)], [(0.0, 2.0)], seed=4, name="angled")
    return renderScene(spec, geometry, np.random.default_rng(4).standard_normal(CHUNK_SAMPLES))


@pytest.fixture()
def tmp_output(tmp_path):
    return str(tmp_path / "run")


def dense_track(active, xNorm, confidence=None, view=0, name="track"):
    active = np.asarray(active, dtype=bool)
    xNorm = np.where(active, np.asarray(xNorm, dtype=np.float64), math.nan)
    return LabelTrack.fromDense(active, xNorm, view, confidence, name=name)
