import pytest


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call":
                continue
            if "test_acceptance" in rep.nodeid:
                rows.append((rep.nodeid.split("::")[-1], outcome))
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, outcome in sorted(rows):
            status = "PASS" if outcome == "passed" else "FAIL"
            terminalreporter.write_line(f"{status} {name}")


@pytest.fixture(scope="session")
def churn_population():
    from maldrift.synth import generate, scenario_presets

    return generate(scenario_presets()["churn"])


@pytest.fixture(scope="session")
def backfill_population():
    from maldrift.synth import generate, scenario_presets

    return generate(scenario_presets()["late-backfill"])
