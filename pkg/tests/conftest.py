import pytest

from diffe.data import SyntheticConfig, generate_synthetic
from diffe.sigproc import epoch_and_baseline, preprocess

from helpers import ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def default_recording():
    """Continuous recording and events of the default one-subject corpus."""
    return generate_synthetic(SyntheticConfig())[0]


@pytest.fixture(scope="session")
def default_corpus(default_recording):
    """Default corpus through the full preprocessing chain."""
    rec, events = default_recording
    return preprocess(rec, events)


@pytest.fixture(scope="session")
def default_raw_epochs(default_recording):
    """Default corpus epoched without any filtering."""
    rec, events = default_recording
    return epoch_and_baseline(rec, events)


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SyntheticConfig(per_class=20, channels=16)
    rec, events = generate_synthetic(cfg)[0]
    return preprocess(rec, events)



def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
