import numpy as np
import pytest

import sidkit.quantizer as quantizer

# Every codebook trained anywhere in the suite must shrink the residual stage by stage.
_train = quantizer.train_residual_kmeans
TRAINED: list[np.ndarray] = []


def _checked_train(E, M, K, config=quantizer.KMeansConfig(), item_type=None):
    cb = _train(E, M, K, config, item_type)
    X = E.values if hasattr(E, "values") else E
    norms = quantizer.stage_residual_norms(cb, X)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:])), f"stage residuals grew: {norms}"
    TRAINED.append(norms)
    return cb


quantizer.train_residual_kmeans = _checked_train

ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    def report(number: int, name: str, passed: bool, detail: str = "") -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {name}" + (f" ({detail})" if detail else "")
        ACCEPTANCE.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
