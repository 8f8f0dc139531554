import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_difference(f, x: torch.Tensor, direction: torch.Tensor, h: float = 1e-5) -> float:
    with torch.no_grad():
        return (float(f(x + h * direction)) - float(f(x - h * direction))) / (2 * h)


def rel_err(a, b, eps=1e-8):
    return abs(a - b) / (abs(b) + eps)


# -- acceptance verdicts, printed together at the end of the session --------------

VERDICTS = []


def record_criterion(number: int, name: str, passed: bool, detail: str):
    VERDICTS.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}")
