import numpy as np
import pytest

from csiloc import autodiff as ad


def finite_difference_check(loss_fn, params, rng, picks=4, h=1e-5, tol=1e-4):
    """Central finite differences on a random coordinate subset.

    loss_fn must rebuild the tape and return (tape, scalar loss) so repeated
    forward passes are pure.
    """
    params.zero_grads()
    tape, loss = loss_fn()
    ad.backward(tape, loss)
    worst = 0.0
    for _, t in params.trainable_items():
        flat = t.value.ravel()
        for idx in rng.choice(flat.size, min(picks, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            _, lp = loss_fn()
            flat[idx] = orig - h
            _, lm = loss_fn()
            flat[idx] = orig
            fd = (lp.value - lm.value) / (2 * h)
            g = t.grad.ravel()[idx]
            worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1.0))
    assert worst < tol, f"max relative gradient error {worst}"
    return worst


@pytest.fixture
def fd_check():
    return finite_difference_check
