import sys
import warnings

import pytest
from hypothesis import HealthCheck, settings

from fpfusion.corpus import SynthSpec, render_impression, synthetic_fingers
from fpfusion.pipeline import extract_template

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("default")

ALL_METHODS = ("minutiae", "ridges", "pores_iso", "pores_adapt")


def pytest_configure(config):
    warnings.filterwarnings("ignore", category=RuntimeWarning)


@pytest.fixture(scope="session")
def small_spec():
    return SynthSpec(n_fingers=6, samples_per_session=1, seed=21)


@pytest.fixture(scope="session")
def impressions(small_spec):
    """Two impressions of each of six synthetic fingers: list of (finger_id, [imp_a, imp_b])."""
    out = []
    for fid, master, rng in synthetic_fingers(small_spec):
        out.append((fid, [render_impression(master, small_spec, rng) for _ in range(2)]))
    return out


@pytest.fixture(scope="session")
def templates(impressions):
    return [(fid, [extract_template(imp.image, ALL_METHODS) for imp in imps]) for fid, imps in impressions]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
