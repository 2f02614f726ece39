import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lidarinsert.augment import extract_object
from lidarinsert.errors import TooFewPoints
from lidarinsert.model import ClassTable
from lidarinsert.spherical import SphericalParams
from lidarinsert.synth import generate_sequence, street_spec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Reduced sensor for fast tests; the range image matches it pixel for pixel.
LOW_BEAMS, LOW_STEPS = 32, 1024
LOW_PARAMS = SphericalParams(rows=LOW_BEAMS, cols=LOW_STEPS)


def bank_from_frames(frames, table=None):
    table = table or ClassTable()
    bank = []
    for f in frames:
        for inst, (box, cls) in enumerate(zip(f.gt_boxes, f.gt_classes), start=1):
            sc = table.get(cls)
            if sc is None or not sc.insertable:
                continue
            try:
                obj = extract_object(f.scan, box, sc, instance_id=inst)
            except TooFewPoints:
                continue
            if len(obj.points) > sc.min_insert_points:
                bank.append(obj)
    return bank


@pytest.fixture(scope="session")
def low_street():
    """Six low-resolution street frames with persons and bicyclists."""
    spec = street_spec(seed=11, frames=6, beams=LOW_BEAMS, azimuth_steps=LOW_STEPS, persons=3, bicyclists=3)
    return generate_sequence(spec)


@pytest.fixture(scope="session")
def low_bank(low_street):
    return bank_from_frames(low_street)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary -----------------------------------------------------------

_ACCEPTANCE: list = []


@pytest.fixture
def criterion():
    """Record one acceptance line, print it and fail the test when it did not hold."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{name}: {'PASS' if ok else 'FAIL'} ({detail})"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
