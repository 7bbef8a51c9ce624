import warnings

import numpy as np
import pytest

from echolex.ingest import Recording

warnings.filterwarnings(
    "ignore", message="Using `httpx` with `starlette.testclient`")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_recording(**overrides) -> Recording:
    base = dict(
        id="rec-001",
        source="inaturalist",
        species_common="Wood Thrush",
        species_scientific="Hylocichla mustelina",
        audio_path="audio/rec-001.wav",
        license="CC-BY",
    )
    base.update(overrides)
    return Recording(**base)


@pytest.fixture
def recording():
    return make_recording()
