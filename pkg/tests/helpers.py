from contextlib import contextmanager

import numpy as np
import torch

REL_TOL = 1e-4


def central_difference(fn, x: torch.Tensor, h: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar ``fn()`` w.r.t. ``x`` (perturbed in place)."""
    grad = np.zeros(x.numel())
    flat = x.data.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = float(fn().detach())
        flat[i] = orig - h
        down = float(fn().detach())
        flat[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad.reshape(tuple(x.shape))


def analytic(fn, x: torch.Tensor) -> np.ndarray:
    x.grad = None
    fn().backward()
    g = x.grad.detach().numpy().copy()
    x.grad = None
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def assert_grad_matches(fn, x: torch.Tensor, tol: float = REL_TOL) -> float:
    err = rel_error(analytic(fn, x), central_difference(fn, x))
    assert err < tol, f"relative gradient error {err:.3e} >= {tol}"
    return err


@contextmanager
def default_dtype(dtype):
    prev = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(prev)
