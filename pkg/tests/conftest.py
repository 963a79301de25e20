from pathlib import Path

import numpy as np
import pytest

from ttfusion.synthetic import SyntheticSpec, generate_synthetic

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """1 train, 1 val and 1 test domain, 4 patches each, 24 dates per area."""
    root = tmp_path_factory.mktemp("data") / "ds"
    spec = SyntheticSpec(domains=1, patches_per_area=4, t_range=(24, 24), seed=7, val_domains=1, test_domains=1)
    generate_synthetic(spec, root)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
        request.config.acceptance_lines.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record
