"""Small dense linear-algebra and loss primitives shared by every module.

All arithmetic is float64.  Matrices and vectors are plain numpy arrays;
the helpers here validate shapes loudly instead of broadcasting silently.
"""
import numpy as np

from . import _kernels

NORM_EPS = _kernels.NORM_EPS


class ShapeError(ValueError):
    pass


def make_rng(seed):
    """PCG64 generator; identical seeds give identical streams everywhere."""
    return np.random.Generator(np.random.PCG64(seed))


def child_rng(seed, *keys):
    """Independent generator keyed by ``(seed, *keys)``, order-free."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def matvec(m, v):
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: {m.shape} x {v.shape}")
    return m @ v


def cosine(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cosine: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_grad(a, b):
    """Gradients of cos(a, b) with respect to ``a`` and ``b``.

    d cos / d a = b / (|a||b|) - cos * a / |a|^2, symmetric for ``b``.
    Degenerate norms yield zero gradients, matching the cosine convention.
    """
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    c = float(a @ b) / (na * nb)
    ga = b / (na * nb) - c * a / (na * na)
    gb = a / (na * nb) - c * b / (nb * nb)
    return c, ga, gb


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, label):
    """Cross-entropy of one logit vector against a class index.

    Returns ``(loss, grad)`` where ``grad = softmax(logits) - onehot(label)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise IndexError(f"label {label} out of range for {logits.shape[0]} logits")
    z = logits - logits.max()
    lse = np.log(np.exp(z).sum())
    loss = float(lse - z[label])
    grad = np.exp(z - lse)
    grad[label] -= 1.0
    return loss, grad


def sgd_step(param, grad, lr):
    """In-place plain SGD update; returns ``param`` for chaining."""
    if param.shape != np.shape(grad):
        raise ShapeError(f"sgd_step: {param.shape} vs {np.shape(grad)}")
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    param -= lr * grad
    return param


def sym_eigvals(s, sym_tol=1e-10):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"square matrix required, got {s.shape}")
    if np.max(np.abs(s - s.T), initial=0.0) > sym_tol:
        raise ValueError("matrix is not symmetric")
    if s.shape[0] == 0:
        return np.empty(0)
    return np.sort(_kernels.jacobi_eigvals(0.5 * (s + s.T)))


def sym_eig_min(s):
    """Smallest eigenvalue of a symmetric matrix via cyclic Jacobi."""
    return float(sym_eigvals(s)[0])


def finite_diff_check(f, theta, analytic_grad, eps=1e-6):
    """Max entrywise relative error between ``analytic_grad`` and central differences.

    ``f`` takes an array shaped like ``theta`` and returns a scalar.  The
    relative error of entry ``i`` is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    theta = np.array(theta, dtype=np.float64, copy=True)
    analytic = np.asarray(analytic_grad, dtype=np.float64).reshape(theta.shape)
    numeric = np.zeros_like(theta)
    flat = theta.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(theta)
        flat[i] = orig - eps
        fm = f(theta)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))
