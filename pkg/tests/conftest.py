import sys

import pytest

from ulf_emi.scenario import build_scenario, load_config, run_pipeline, scenario_metrics

DEMO_SEED = 42


@pytest.fixture(scope="session")
def default_scenario():
    return build_scenario(load_config({"seed": DEMO_SEED}))


@pytest.fixture(scope="session")
def default_run(default_scenario):
    result = run_pipeline(default_scenario)
    return result, scenario_metrics(result)["metrics"]


@pytest.fixture(scope="session")
def strong_run():
    scen = build_scenario(load_config({"seed": DEMO_SEED}, "strong-emi"))
    result = run_pipeline(scen)
    return result, scenario_metrics(result)["metrics"]


@pytest.fixture(scope="session")
def demo_runs(tmp_path_factory):
    """Two independent simulate+report runs of the demo with the same seed."""
    from ulf_emi.cli import main

    dirs = []
    for i in range(2):
        out = tmp_path_factory.mktemp(f"demo{i}")
        assert main(["simulate", "--seed", str(DEMO_SEED), "--out", str(out)]) == 0
        assert main(["report", str(out)]) == 0
        dirs.append(out)
    return dirs


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
