import re

import numpy as np
import pytest
from skimage import data

CRITERIA = {}


@pytest.fixture
def record_criterion(request):
    """Record ``(passed, detail)`` for an acceptance criterion; ``passed=None`` marks a skip."""

    def record(number, passed, detail):
        number = str(number)
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        CRITERIA[number] = (status, detail)
        print(f"criterion {number}: {status} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")

    def order(key):
        m = re.match(r"(\d+)(.*)", key)
        return (int(m.group(1)), m.group(2)) if m else (10**6, key)

    for number in sorted(CRITERIA, key=order):
        status, detail = CRITERIA[number]
        terminalreporter.write_line(f"[{status}] #{number}: {detail}")


@pytest.fixture(scope="session")
def camera_patch():
    """256x256 natural image patch in [0, 1]."""
    img = data.camera().astype(float) / 255.0
    return img[128:384, 128:384].copy()


@pytest.fixture(scope="session")
def fundus_crop():
    """512x512 green-channel crop of a fundus photograph, in [0, 1]."""
    img = data.retina()[..., 1].astype(float) / 255.0
    return img[400:912, 300:812].copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
