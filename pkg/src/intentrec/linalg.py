"""Dense kernels shared by every model component.

All functions are pure, operate on 2-D float arrays, and have a matching
hand-derived vector-Jacobian product where the backward pass needs one.
Tests and oracles run in float64; inputs of other float dtypes pass through
unchanged.
"""

import numpy as np

from .errors import ConfigError, ShapeError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Checked matrix product C = A @ B."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def leaky_relu(x: np.ndarray, slope: float = 0.5) -> np.ndarray:
    """Elementwise x if x >= 0 else slope * x.

    slope = 1.0 is the identity and is used by the score-decomposition
    diagnostics.
    """
    if not 0.0 <= slope <= 1.0:
        raise ConfigError(f"leaky_relu slope must be in [0, 1], got {slope}")
    return np.where(x >= 0.0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float = 0.5) -> np.ndarray:
    """Derivative of leaky_relu with respect to its pre-activation."""
    return np.where(x > 0.0, 1.0, slope)


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Divide each row by max(||row||, eps). Zero rows pass through as zeros."""
    if eps <= 0.0:
        raise ConfigError(f"eps must be positive, got {eps}")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, eps)


def l2_normalize_rows_backward(
    x: np.ndarray, grad_out: np.ndarray, eps: float = 1e-8
) -> np.ndarray:
    """VJP of l2_normalize_rows at x.

    For rows with ||x|| > eps the map is x/||x|| with Jacobian
    (I - y y^T)/||x||; rows at or below eps are the constant scaling x/eps.
    """
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.maximum(norms, eps)
    y = x / safe
    dot = np.sum(y * grad_out, axis=1, keepdims=True)
    grad_in = grad_out / safe
    grad_in = grad_in - np.where(norms > eps, dot * y / safe, 0.0)
    return grad_in


def cosine(a: np.ndarray, b: np.ndarray, eps: float = 1e-8) -> float:
    """Cosine similarity of two vectors; zero vectors get similarity 0."""
    na = max(float(np.linalg.norm(a)), eps)
    nb = max(float(np.linalg.norm(b)), eps)
    return float(a @ b) / (na * nb)


def cosine_backward(a, b, grad: float, eps: float = 1e-8):
    """Gradients of `grad * cosine(a, b)` with respect to a and b."""
    na_raw = float(np.linalg.norm(a))
    nb_raw = float(np.linalg.norm(b))
    na = max(na_raw, eps)
    nb = max(nb_raw, eps)
    s = float(a @ b) / (na * nb)
    da = b / (na * nb)
    if na_raw > eps:
        da = da - s * a / (na * na)
    db = a / (na * nb)
    if nb_raw > eps:
        db = db - s * b / (nb * nb)
    return grad * da, grad * db
