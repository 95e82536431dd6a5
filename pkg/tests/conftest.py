import pytest

from urnaudit import CohortConfig, GroupSpec, UrnParameters, run_cohort

# lines collected by test_acceptance.py and printed in the terminal summary
ACCEPTANCE_LINES = []

LONG_RUN = {
    "uniform": UrnParameters(1, 1, 1),
    "concentrated": UrnParameters(1, 1, 0.1),
    "extreme": UrnParameters(1, 1, 10),
}


def two_group_config(delta, population, horizon, seed, record_full_paths=True):
    return CohortConfig(
        population=population,
        horizon=horizon,
        groups=(GroupSpec("reference", 0.5, 0.0), GroupSpec("shifted", 0.5, delta)),
        master_seed=seed,
        record_full_paths=record_full_paths,
    )


@pytest.fixture(scope="session")
def long_run_endpoints():
    """10^4 endpoints at T = 10^3 for each of the three increments."""
    out = {}
    for i, (name, params) in enumerate(LONG_RUN.items()):
        config = CohortConfig(10_000, 1000, params, master_seed=1000 + i, record_full_paths=False)
        out[name] = (params, run_cohort(config).endpoints)
    return out


@pytest.fixture(scope="session")
def amplified_cohort():
    return run_cohort(two_group_config(0.01, 200_000, 200, seed=8))


@pytest.fixture(scope="session")
def null_cohort():
    return run_cohort(two_group_config(0.0, 200_000, 200, seed=9))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
