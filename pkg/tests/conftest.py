import numpy as np
import pytest

from scail.config import DataSpec, MethodParams, NetworkSpec, RunConfig, ScheduleSpec, StreamSpec


def tiny_config(method="FT", capacity=8, states=3, seed=0, selection="random", top_m=10, classes=6):
    return RunConfig(
        method=method,
        data=DataSpec(kind="synthetic", num_classes=classes, dim=5, per_class_train=20, per_class_test=10,
                      separation=3.0, seed=1),
        stream=StreamSpec(states=states),
        network=NetworkSpec(hidden_dims=(8,), activation="relu"),
        schedule=ScheduleSpec(epochs=4, initial_epochs=6, batch_size=16),
        memory_capacity=capacity,
        selection=selection,
        params=MethodParams(top_m=top_m),
        seed=seed,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        request.config._acceptance_lines.append(line)
        assert ok, line

    return record
