import numpy as np
import pytest

CRITERIA = {
    1: "finite-difference gradient suite (primitives + composed nets)",
    2: "quantizer matches exhaustive nearest-neighbor search",
    3: "loss structure: baseline objective, recomposition, stop-gradients",
    4: "beta/gamma schedule anchors and interpolated spot values",
    5: "extended model beats baseline on synthetic-corpus log-F0 RMSE",
    6: "overfit one utterance: NLL < 0.1 and >= 95% greedy coarse match",
    7: "bijection and invariance suite + bit-exact checkpoints",
    8: "F0 codebook capacity: K=10 uses >2 codes and beats K=2",
}

_acceptance_outcomes = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    for number in CRITERIA:
        if f"criterion_{number}" in report.nodeid:
            _acceptance_outcomes[number] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance_outcomes):
        outcome = _acceptance_outcomes[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(
            f"criterion {number}: {verdict} - {CRITERIA[number]}"
        )
