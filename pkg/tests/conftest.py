import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_unit(rng, n):
    u = rng.normal(size=(n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


@pytest.fixture
def unit_vectors():
    return random_unit


# acceptance criteria report: one line per criterion, repeated in the terminal summary
_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request, capsys):
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        lines[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
