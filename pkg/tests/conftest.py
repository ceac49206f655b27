"""Shared test fixtures and independent numerical oracles."""

import numpy as np
import pytest

from gatsv.data import SynthConfig, generate


def central_diff(f, arr, step=1e-6):
    """Central finite-difference gradient of scalar f() w.r.t. arr.

    Perturbs arr in place entry by entry; f must read arr at call time.
    """
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f()
        flat[i] = orig - step
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def assert_grad_matches(analytic, fd, tol=1e-6, floor=1e-8):
    """Relative comparison where |fd| > floor, absolute sanity elsewhere."""
    analytic = np.asarray(analytic)
    fd = np.asarray(fd)
    assert analytic.shape == fd.shape
    big = np.abs(fd) > floor
    if big.any():
        rel = np.abs(analytic[big] - fd[big]) / np.abs(fd[big])
        assert rel.max() < tol, f"worst rel err {rel.max():.3e} >= {tol:g}"
    small = ~big
    if small.any():
        assert np.abs(analytic[small]).max() < 1e-5


def worst_rel_err(analytic, fd, floor=1e-8):
    """Worst relative disagreement over entries whose magnitude exceeds
    the floor; near-zero pairs (true gradient ~ 0) are compared absolutely
    and never inflate the relative figure."""
    analytic = np.asarray(analytic).reshape(-1)
    fd = np.asarray(fd).reshape(-1)
    mag = np.maximum(np.abs(analytic), np.abs(fd))
    live = mag > floor
    worst = 0.0
    if live.any():
        worst = float((np.abs(analytic[live] - fd[live]) / mag[live]).max())
    if (~live).any():
        assert np.abs(analytic[~live] - fd[~live]).max() < 10 * floor
    return worst


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small deterministic corpus shared by train/baseline tests."""
    cfg = SynthConfig(
        speakers=10,
        utterances_per_speaker=4,
        segments_per_utterance=4,
        dim=8,
        seed=77,
    )
    return generate(cfg, split="train")
