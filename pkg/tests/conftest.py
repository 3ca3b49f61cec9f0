import numpy as np
import pytest
import torch

from envspoof.config import ExperimentConfig


def finite_difference_check(model, loss_fn, named_params, n_per_param=1, step=1e-4, seed=0):
    """Compare autograd to central differences at randomly chosen entries.

    Returns a list of (name, index, analytic, numeric, rel_error).
    """
    rng = np.random.default_rng(seed)
    model.zero_grad()
    loss_fn().backward()
    results = []
    for name, p in named_params:
        for _ in range(n_per_param):
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            analytic = p.grad[idx].item()
            with torch.no_grad():
                orig = p[idx].item()
                p[idx] = orig + step
                plus = loss_fn().item()
                p[idx] = orig - step
                minus = loss_fn().item()
                p[idx] = orig
            numeric = (plus - minus) / (2 * step)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            results.append((name, idx, analytic, numeric, rel))
    return results


def random_mel(batch=2, frames=398, n_mels=128, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return (torch.rand(batch, frames, n_mels, generator=g, dtype=dtype) * 30 - 23)


@pytest.fixture
def desk_config():
    return ExperimentConfig()


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
