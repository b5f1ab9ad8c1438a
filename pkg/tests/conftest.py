import numpy as np
import pytest

from causalsvm.domain import Dataset, make_unit

ACCEPTANCE_LINES: list[str] = []


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


def random_dataset(rng, n, d=2, ratio_range=(0.5, 2.0), both=True) -> Dataset:
    """Canonical dataset with random features, labels and control ratios."""
    X = rng.normal(size=(n, d))
    g = rng.random(n) < 0.5
    if both:
        g[0], g[1] = True, False
    y = rng.choice([-1, 1], n)
    r = rng.uniform(*ratio_range, n)
    units = [make_unit(X[k], "T" if g[k] else "C", y[k], ratio=None if g[k] else r[k]) for k in range(n)]
    return Dataset(tuple(units)).canonical()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
