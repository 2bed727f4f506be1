"""Losses, their optimal constant solutions (OCS), and distance-to-OCS metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, InfiniteDivergenceError, NumericError
from .numcore import log_softmax, logsumexp_rows

CE = "cross_entropy"
MSE_REWARD = "mse_reward"
GAUSSIAN_NLL = "gaussian_nll"
KINDS = (CE, MSE_REWARD, GAUSSIAN_NLL)


@dataclass(frozen=True)
class LossSpec:
    kind: str
    num_classes: int = 0
    reward_correct: float = 1.0
    reward_incorrect: float = -4.0
    reward_abstain: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind != GAUSSIAN_NLL and self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.kind == MSE_REWARD and not (
            self.reward_correct > self.reward_abstain > self.reward_incorrect
        ):
            raise ValueError("rewards must satisfy correct > abstain > incorrect")

    @classmethod
    def cross_entropy(cls, num_classes: int) -> LossSpec:
        return cls(CE, num_classes)

    @classmethod
    def mse_reward(cls, num_classes: int, correct=1.0, incorrect=-4.0, abstain=0.0) -> LossSpec:
        return cls(MSE_REWARD, num_classes, correct, incorrect, abstain)

    @classmethod
    def gaussian_nll(cls) -> LossSpec:
        return cls(GAUSSIAN_NLL)

    @property
    def output_width(self) -> int:
        if self.kind == CE:
            return self.num_classes
        if self.kind == MSE_REWARD:
            return self.num_classes + 1
        return 2

    @property
    def tag(self) -> str:
        """Compact text form, parsed back by :meth:`from_tag`."""
        if self.kind == CE:
            return f"{CE}:{self.num_classes}"
        if self.kind == MSE_REWARD:
            return (
                f"{MSE_REWARD}:{self.num_classes}:{self.reward_correct!r}:"
                f"{self.reward_incorrect!r}:{self.reward_abstain!r}"
            )
        return GAUSSIAN_NLL

    @classmethod
    def from_tag(cls, tag: str) -> LossSpec:
        parts = tag.split(":")
        if parts[0] == CE and len(parts) == 2:
            return cls.cross_entropy(int(parts[1]))
        if parts[0] == MSE_REWARD and len(parts) == 5:
            return cls.mse_reward(int(parts[1]), *map(float, parts[2:]))
        if parts[0] == GAUSSIAN_NLL and len(parts) == 1:
            return cls.gaussian_nll()
        raise ValueError(f"bad loss tag {tag!r}")

    def reward_table(self, labels) -> np.ndarray:
        """Per-action reward rows (N x (K+1)) for class labels; abstain is the last column."""
        labels = np.asarray(labels, dtype=np.int64)
        k = self.num_classes
        table = np.full((labels.size, k + 1), self.reward_incorrect, dtype=np.float64)
        table[np.arange(labels.size), labels] = self.reward_correct
        table[:, k] = self.reward_abstain
        return table


@dataclass(frozen=True)
class Ocs:
    """Optimal constant output.

    ``value`` holds class log-probabilities (cross entropy), per-action
    rewards (MSE reward), or ``[mu, sigma]`` (Gaussian NLL).
    """

    loss: LossSpec
    value: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        if self.loss.kind != CE:
            raise AttributeError("probs only defined for cross entropy")
        return np.exp(self.value)

    @property
    def mu(self) -> float:
        return float(self.value[0])

    @property
    def sigma(self) -> float:
        return float(self.value[1])

    def as_output(self) -> np.ndarray:
        """The OCS written in the network's raw output coordinates."""
        if self.loss.kind == GAUSSIAN_NLL:
            return np.array([self.mu, np.log(self.sigma)])
        return self.value.copy()


def _check_labels(loss: LossSpec, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty targets")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("class labels must be integers")
        labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= loss.num_classes:
        raise ValueError(f"labels outside [0, {loss.num_classes})")
    return labels.astype(np.int64).ravel()


def compute_ocs(loss: LossSpec, targets) -> Ocs:
    """The constant output minimizing mean training loss over ``targets``.

    For MSE reward, ``targets`` may be class labels (every action supervised)
    or an already-built N x (K+1) reward table.
    """
    if loss.kind == CE:
        labels = _check_labels(loss, targets)
        counts = np.bincount(labels, minlength=loss.num_classes).astype(np.float64)
        with np.errstate(divide="ignore"):
            return Ocs(loss, np.log(counts / labels.size))
    if loss.kind == MSE_REWARD:
        t = np.asarray(targets)
        if t.ndim == 2:
            if t.shape[0] == 0:
                raise ValueError("empty targets")
            if t.shape[1] != loss.output_width:
                raise ValueError("reward table width does not match the action set")
            table = t.astype(np.float64)
        else:
            table = loss.reward_table(_check_labels(loss, t))
        return Ocs(loss, table.mean(axis=0))
    y = np.asarray(targets, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("empty targets")
    mu = y.mean()
    var = np.mean((y - mu) ** 2)
    if var == 0:
        raise DegenerateError("Gaussian NLL OCS undefined for constant labels (zero variance)")
    return Ocs(loss, np.array([mu, np.sqrt(var)]))


def ocs_from_tuples(loss: LossSpec, actions, rewards) -> Ocs:
    """MSE-reward OCS from sampled (action, reward) pairs: mean reward per action."""
    actions = np.asarray(actions, dtype=np.int64)
    rewards = np.asarray(rewards, dtype=np.float64)
    width = loss.output_width
    counts = np.bincount(actions, minlength=width)
    if np.any(counts == 0):
        raise DegenerateError("some action never appears in the tuples")
    return Ocs(loss, np.bincount(actions, weights=rewards, minlength=width) / counts)


def batch_loss_grad(loss: LossSpec, outputs: np.ndarray, targets) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and d(loss_i)/d(output_i) for a batch of raw outputs."""
    out = np.asarray(outputs, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != loss.output_width:
        raise ValueError(f"outputs must be N x {loss.output_width}, got {out.shape}")
    n = out.shape[0]
    if loss.kind == CE:
        labels = np.asarray(targets, dtype=np.int64).ravel()
        logp = out - logsumexp_rows(out)[:, None]
        losses = -logp[np.arange(n), labels]
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return losses, grad
    if loss.kind == MSE_REWARD:
        t = np.asarray(targets)
        table = t.astype(np.float64) if t.ndim == 2 else loss.reward_table(t)
        resid = out - table
        width = loss.output_width
        return np.sum(resid**2, axis=1) / width, 2.0 * resid / width
    y = np.asarray(targets, dtype=np.float64).ravel()
    mu, s = out[:, 0], out[:, 1]
    inv_var = np.exp(-2.0 * s)
    sq = (y - mu) ** 2
    losses = 2.0 * s + sq * inv_var
    grad = np.column_stack([-2.0 * (y - mu) * inv_var, 2.0 - 2.0 * sq * inv_var])
    return losses, grad


def loss_eval(loss: LossSpec, output, target) -> float:
    """Loss of a single raw output vector against one target.

    Gaussian NLL outputs are ``(mu, s)`` with ``sigma = exp(s)``; use
    :func:`gaussian_nll` to evaluate with an explicit ``sigma``.
    """
    out = np.asarray(output, dtype=np.float64).reshape(1, -1)
    if out.shape[1] != loss.output_width:
        raise ValueError(f"output width {out.shape[1]} != {loss.output_width}")
    if loss.kind == MSE_REWARD:
        t = np.asarray(target)
        target = t.reshape(1, -1) if t.ndim == 1 else [int(target)]
    else:
        target = [target]
    losses, _ = batch_loss_grad(loss, out, target)
    return float(losses[0])


def gaussian_nll(mu: float, sigma: float, y: float) -> float:
    """log(sigma^2) + (y - mu)^2 / sigma^2."""
    if not sigma > 0:
        raise NumericError(f"sigma must be positive, got {sigma}")
    return float(np.log(sigma**2) + (y - mu) ** 2 / sigma**2)


def categorical_kl(p, q) -> np.ndarray:
    """Row-wise KL(p || q). Raises if p has mass where q has none."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.asarray(q, dtype=np.float64)
    support = q > 0
    if np.any(p[:, ~support] > 0):
        raise InfiniteDivergenceError("prediction puts mass on a class the OCS gives zero probability")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(np.where(support, q, 1.0))), 0.0)
    return terms.sum(axis=1)


def gaussian_kl(mu1, sigma1, mu2, sigma2) -> np.ndarray:
    """KL(N(mu1, sigma1^2) || N(mu2, sigma2^2)), elementwise."""
    mu1, sigma1 = np.asarray(mu1, dtype=np.float64), np.asarray(sigma1, dtype=np.float64)
    return np.log(sigma2 / sigma1) + (sigma1**2 + (mu1 - mu2) ** 2) / (2 * sigma2**2) - 0.5


def per_sample_distance(predictions, ocs: Ocs) -> np.ndarray:
    """Distance of each raw network output to the OCS."""
    pred = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    loss = ocs.loss
    if pred.shape[0] == 0:
        raise ValueError("no predictions")
    if pred.shape[1] != loss.output_width:
        raise ValueError(f"prediction width {pred.shape[1]} != {loss.output_width}")
    if loss.kind == CE:
        return categorical_kl(np.exp(log_softmax(pred)), ocs.probs)
    if loss.kind == MSE_REWARD:
        return np.sum((pred - ocs.value) ** 2, axis=1)
    return gaussian_kl(pred[:, 0], np.exp(pred[:, 1]), ocs.mu, ocs.sigma)


def distance_to_ocs(predictions, ocs: Ocs) -> float:
    """Mean KL(model || OCS) for probabilistic losses, mean squared distance for MSE reward."""
    return float(np.mean(per_sample_distance(predictions, ocs)))
