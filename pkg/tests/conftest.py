import pytest

from photonlink import orbit

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def champ_samples():
    return orbit.synth_pass(sample_interval_s=0.05, **orbit.champ_pass_geometry())


@pytest.fixture(scope="session")
def champ_model(champ_samples):
    return orbit.fit_range(champ_samples, 4)


@pytest.fixture
def record_criterion():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(label, ok, detail=""):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
