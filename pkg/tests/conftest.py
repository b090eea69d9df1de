import numpy as np
import pytest

from fufi.synthetic import SyntheticSpec, generate_synthetic, random_regimes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_spec(samples=60, weather=(0, 1), geo=None, noise=0.0, seed=0, ticket=False):
    regimes = random_regimes(16, 16, 4, weather_ids=weather, seed=seed + 11)
    return SyntheticSpec(16, 16, 4, samples, regimes, noise_level=noise, seed=seed,
                         geo_poi_channels=geo, ticket_price=ticket)


@pytest.fixture
def small_ds():
    return generate_synthetic(small_spec())


@pytest.fixture
def geo_ds():
    return generate_synthetic(small_spec(geo=2))


_acceptance_rows = []


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        label = dict(report.user_properties).get("criterion")
        if label:
            _acceptance_rows.append((label, report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_rows:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, duration in _acceptance_rows:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark}  {label}  ({duration:.1f}s)")
