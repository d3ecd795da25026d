import pytest
import torch

torch.set_num_threads(1)

# criterion verdict lines collected by test_acceptance, echoed after the
# run so they are visible regardless of output capturing
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng() -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(1234)
    return g


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
