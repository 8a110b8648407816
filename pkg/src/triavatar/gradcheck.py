"""Central finite-difference verification of recorded gradients."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tensor


def numeric_gradient(fn, tensor: Tensor, eps: float = 1e-3) -> np.ndarray:
    """d fn()/d tensor via central differences, perturbing one element at a time.

    `fn` must be a closure over `tensor` returning a scalar Tensor (or float).
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        hi = _scalar(fn())
        flat[i] = saved - eps
        lo = _scalar(fn())
        flat[i] = saved
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(tensor.data.shape)


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        return float(value.data)
    return float(value)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a-n| / max(1, |a|, |n|)."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(fn, tensors, eps: float = 1e-3, tol: float = 1e-4) -> float:
    """Assert that recorded grads of fn() w.r.t. each tensor match finite differences.

    Returns the worst relative error seen. Grads on the tensors are reset first.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(fn, t, eps=eps)
        err = relative_error(analytic, numeric)
        worst = max(worst, err)
        if err > tol:
            raise AssertionError(
                f"gradient mismatch: rel err {err:.3e} > {tol:g} "
                f"for tensor of shape {t.data.shape}")
    for t in tensors:
        if isinstance(t, Parameter):
            t.zero_grad()
        else:
            t.grad = None
    return worst
