"""Numerical primitives: RNG, top-k singular vectors, stable logsumexp, finite differences.

Matrices are plain float64 numpy arrays. Everything here is pure given its inputs.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConvergenceError, NumericError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; the stream for a seed is platform independent."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(key=int(seed)))


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for work item ``index`` under ``seed``.

    Keyed by ``seed ^ index`` with ``index`` also placed in the counter, so
    results do not depend on the order in which items are processed.
    """
    key = (int(seed) ^ int(index)) % 2**64
    counter = np.array([0, 0, 0, int(index) % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")
    return a


def top_right_singular(
    m,
    k: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Top ``k`` right singular vectors of ``m`` by block power iteration.

    Iterates an oversampled orthonormal block ``V <- orth(M^T M V)`` and
    resolves directions inside the block with a Rayleigh-Ritz step, so tightly
    clustered singular values do not stall convergence the way one-vector
    deflation does. Returns ``(basis, sigmas)``: ``basis`` is ``cols x k`` with
    orthonormal columns, ``sigmas`` nonincreasing.

    Converged when every returned pair has eigen-residual
    ``||M^T M v - s^2 v|| <= tol * sigma_max^2``; otherwise raises
    ``ConvergenceError`` after ``max_iter`` iterations.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if not 1 <= k <= min(rows, cols):
        raise ValueError(f"k={k} out of range for a {rows}x{cols} matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")

    gram = a.T @ a
    p = min(cols, k + max(4, k // 2))
    block, _ = np.linalg.qr(make_rng(seed).standard_normal((cols, p)))
    for _ in range(max_iter):
        block, _ = np.linalg.qr(gram @ block)
        small = block.T @ gram @ block
        evals, evecs = np.linalg.eigh((small + small.T) / 2)
        order = np.argsort(-evals, kind="stable")
        evals, ritz = evals[order], block @ evecs[:, order]
        top = max(evals[0], 0.0)
        resid = gram @ ritz[:, :k] - ritz[:, :k] * evals[:k]
        if top == 0 or np.all(np.linalg.norm(resid, axis=0) <= tol * top):
            break
        block = ritz
    else:
        raise ConvergenceError(f"block power iteration did not converge in {max_iter} iterations")

    basis = ritz[:, :k]
    # fix the sign so results are reproducible: largest-magnitude entry positive
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(k)])
    basis = basis * np.where(flip == 0, 1.0, flip)
    sigmas = np.linalg.norm(a @ basis, axis=0)
    order = np.argsort(-sigmas, kind="stable")
    return basis[:, order], sigmas[order]


def operator_norm(m, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> float:
    """Largest singular value."""
    _, s = top_right_singular(m, 1, tol=tol, max_iter=max_iter)
    return float(s[0])


def logsumexp(v) -> float:
    """log(sum(exp(v))) computed with a max shift."""
    a = np.asarray(v, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("logsumexp of an empty vector")
    if not np.all(np.isfinite(a)):
        raise NumericError("logsumexp input has non-finite entries")
    top = a.max()
    return float(top + np.log(np.sum(np.exp(a - top))))


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp for a 2-D array."""
    top = a.max(axis=1, keepdims=True)
    return (top + np.log(np.sum(np.exp(a - top), axis=1, keepdims=True)))[:, 0]


def log_softmax(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        return a - logsumexp(a)
    return a - logsumexp_rows(a)[:, None]


def softmax(a: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(a))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite function value at coordinate {i}", index=i)
        grad[i] = (up - down) / (2 * h)
    return grad.reshape(x.shape)


def stable_rank(m) -> float:
    """||M||_F^2 / ||M||_op^2."""
    a = as_matrix(m)
    op = operator_norm(a)
    if op == 0:
        raise NumericError("stable rank of a zero matrix")
    return float(np.sum(a * a) / op**2)


def spearman(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    from scipy.stats import spearmanr

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("spearman needs two equal-length sequences of length >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    return float(spearmanr(x, y).statistic)


def pairwise_sum(values: np.ndarray) -> float:
    """Order-fixed pairwise summation (deterministic regardless of chunking)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        return 0.0
    while v.size > 1:
        if v.size % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0])
