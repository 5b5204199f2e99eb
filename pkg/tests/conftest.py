import numpy as np
import pandas as pd
import pytest
import torch

from nri_transport.core import SeriesDataset


def make_dataset(T=40, N=4, c=1, c_u=2, seed=0):
    rng = np.random.default_rng(seed)
    return SeriesDataset(
        rng.standard_normal((T, N, c)),
        rng.standard_normal((T, c_u)),
        pd.date_range("2021-03-01", periods=T, freq="h").to_numpy(),
        tuple(f"v{j}" for j in range(N)),
    )


@pytest.fixture
def small_dataset():
    return make_dataset()


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(1234)
    yield


def central_difference_check(fn, params, h=1e-6, rtol=1e-4, atol=1e-9):
    """Compare autograd gradients of scalar ``fn()`` with central differences, entry by entry.

    Returns the worst relative error seen; raises AssertionError on failure.
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [torch.zeros_like(p) if p.grad is None else p.grad.detach().clone() for p in params]
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat, gflat = p.view(-1), g.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + h
                up = fn().item()
                flat[k] = orig - h
                down = fn().item()
                flat[k] = orig
                num = (up - down) / (2 * h)
                err = abs(num - gflat[k].item())
                scale = max(abs(num), abs(gflat[k].item()))
                assert err <= rtol * scale + atol, (p.shape, k, num, gflat[k].item())
                if scale > 0:
                    worst = max(worst, err / scale)
    return worst


ACCEPTANCE: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
