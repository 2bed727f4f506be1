"""OOD score: how well a linear discriminator separates training from evaluation inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError
from .numcore import make_rng

MIN_PER_SIDE = 10


@dataclass(frozen=True)
class OodScoreConfig:
    seed: int = 0
    holdout_frac: float = 0.2
    steps: int = 500
    lr: float = 0.5
    l2: float = 0.1


@dataclass(frozen=True)
class OodScoreReport:
    score: float
    discriminator_accuracy: float
    n_train_used: int
    n_eval_used: int


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(x: np.ndarray, y: np.ndarray, steps: int, lr: float, l2: float):
    """Full-batch gradient descent on mean logistic loss + (l2/2)||w||^2."""
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(steps):
        p = _sigmoid(x @ w + b)
        r = (p - y) / n
        w -= lr * (x.T @ r + l2 * w)
        b -= lr * r.sum()
    return w, b


def ood_score(train_inputs, eval_inputs, cfg: OodScoreConfig = OodScoreConfig()) -> OodScoreReport:
    """Mean held-out probability, under a logistic train-vs-eval discriminator, that
    evaluation inputs come from the evaluation set. 0.5 means indistinguishable.
    """
    a = np.asarray(train_inputs, dtype=np.float64)
    b = np.asarray(eval_inputs, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("train and eval inputs must be 2-D with equal width")
    n = min(a.shape[0], b.shape[0])
    if n < MIN_PER_SIDE:
        raise InsufficientDataError(f"need at least {MIN_PER_SIDE} samples per side, got {n}")
    if not 0 < cfg.holdout_frac < 1:
        raise ValueError("holdout_frac must be in (0, 1)")

    rng = make_rng(cfg.seed)
    a = a[rng.permutation(a.shape[0])[:n]]
    b = b[rng.permutation(b.shape[0])[:n]]
    n_hold = max(1, int(round(cfg.holdout_frac * n)))
    if n - n_hold < 1:
        raise InsufficientDataError("holdout leaves nothing to fit on")

    fit_x = np.vstack([a[n_hold:], b[n_hold:]])
    fit_y = np.concatenate([np.zeros(n - n_hold), np.ones(n - n_hold)])
    # one global scale: per-feature standardization would inflate near-constant pixels
    mean = fit_x.mean(axis=0)
    std = float(np.sqrt(np.mean((fit_x - mean) ** 2)))
    if std < 1e-12:
        std = 1.0

    def featurize(v):
        return (v - mean) / std

    w, bias = fit_logistic(featurize(fit_x), fit_y, cfg.steps, cfg.lr, cfg.l2)
    p_train = _sigmoid(featurize(a[:n_hold]) @ w + bias)
    p_eval = _sigmoid(featurize(b[:n_hold]) @ w + bias)
    acc = (np.sum(p_train < 0.5) + np.sum(p_eval >= 0.5)) / (2 * n_hold)
    return OodScoreReport(float(np.mean(p_eval)), float(acc), n, n)
