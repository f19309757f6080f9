import numpy as np
import pytest

from diffmonitor.signal_core import SynthConfig, synth_activity_dataset


@pytest.fixture(scope="session")
def desk_synth_cfg() -> SynthConfig:
    return SynthConfig(participants=4, windows_per_participant=20, channels=4,
                       class_names=("Walking", "Cycling"), fundamentals_hz=(1.8, 1.2),
                       harmonics=((1.0, 0.5, 0.25), (1.0, 0.35, 0.1)))


@pytest.fixture(scope="session")
def desk_dataset(desk_synth_cfg):
    return synth_activity_dataset(desk_synth_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    class Recorder:
        def __init__(self):
            self.label = None

        def __call__(self, label):
            self.label = label
            return self

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            status = "PASS" if exc_type is None else "FAIL"
            line = f"{status} {self.label}"
            if exc is not None:
                line += f" ({' '.join(str(exc).split())[:160]})"
            lines.append(line)
            print(line)
            return False

    return Recorder()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
