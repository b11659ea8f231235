import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


class Verdict:
    """Collects one PASS/FAIL line for an acceptance criterion."""

    def __init__(self, store: dict, label: str):
        self.store = store
        self.label = label
        self.checks: list[tuple[str, bool]] = []

    def check(self, what: str, ok) -> bool:
        self.checks.append((what, bool(ok)))
        return bool(ok)

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(ok for _, ok in self.checks)

    def line(self) -> str:
        detail = "; ".join(f"{w} [{'ok' if ok else 'FAIL'}]" for w, ok in self.checks) or "did not complete"
        return f"{self.label}: {'PASS' if self.ok else 'FAIL'} | {detail}"


@pytest.fixture
def verdict(request):
    """Per-criterion recorder; the line is printed at once and again in the terminal summary."""
    v = Verdict(request.config.stash[_VERDICTS], request.node.get_closest_marker("criterion").args[0])
    yield v
    v.store[v.label] = v.line()
    print(v.line())


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(lines, key=lambda s: int(s[2:])):
        terminalreporter.write_line(lines[label])
