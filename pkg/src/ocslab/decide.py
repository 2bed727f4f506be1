"""Selective classification with an abstain action.

Three policies are compared: argmax of a learned reward model, argmax of a
plain classifier (never abstains), and a temperature-calibrated classifier that
abstains below the reward-optimal confidence threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError
from .netcore import Mlp, forward
from .numcore import log_softmax, logsumexp_rows

ABSTAIN = "abstain"
GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class RewardSpec:
    num_classes: int
    reward_correct: float = 1.0
    reward_incorrect: float = -4.0
    reward_abstain: float = 0.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.reward_correct > self.reward_abstain > self.reward_incorrect:
            raise ValueError("rewards must satisfy correct > abstain > incorrect")

    @property
    def abstain_action(self) -> int:
        """Actions are class indices followed by abstain."""
        return self.num_classes

    @property
    def num_actions(self) -> int:
        return self.num_classes + 1

    def threshold(self) -> float:
        """Confidence p* at which classifying and abstaining have equal expected reward."""
        return (self.reward_abstain - self.reward_incorrect) / (self.reward_correct - self.reward_incorrect)


def env_reward(spec: RewardSpec, action, true_class: int) -> float:
    if action == ABSTAIN:
        action = spec.abstain_action
    if isinstance(action, bool) or not isinstance(action, (int, np.integer)) or not 0 <= action <= spec.num_classes:
        raise ValueError(f"invalid action {action!r}")
    if action == spec.abstain_action:
        return spec.reward_abstain
    return spec.reward_correct if action == true_class else spec.reward_incorrect


def first_argmax(values: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(np.atleast_2d(values), axis=1)


Policy = Callable[[np.ndarray], np.ndarray]


def reward_policy(reward_model: Mlp, spec: RewardSpec) -> Policy:
    """Pick the action with the highest predicted reward (abstain is the last action)."""
    if reward_model.layer_sizes[-1] != spec.num_actions:
        raise ValueError(f"reward model must output {spec.num_actions} values")

    def act(x):
        return first_argmax(forward(reward_model, np.atleast_2d(x)))

    return act


def classifier_policy(classifier: Mlp, spec: RewardSpec | None = None) -> Policy:
    if spec is not None and classifier.layer_sizes[-1] != spec.num_classes:
        raise ValueError(f"classifier must output {spec.num_classes} logits")

    def act(x):
        return first_argmax(forward(classifier, np.atleast_2d(x)))

    return act


def temperature_nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    z = logits / temperature
    return float(np.mean(logsumexp_rows(z) - z[np.arange(len(labels)), labels]))


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-4, max_iter: int = 200) -> float:
    a, b = lo, hi
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            return (a + b) / 2
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    raise ConvergenceError("golden-section search did not converge")


def fit_temperature(logits, labels, lo: float = 0.05, hi: float = 20.0, tol: float = 1e-4) -> float:
    """Temperature minimizing mean cross entropy of softmax(logits / T)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    return golden_section_min(lambda t: temperature_nll(logits, labels, t), lo, hi, tol)


@dataclass
class OraclePolicy:
    classifier: Mlp
    temperature: float
    threshold: float
    spec: RewardSpec

    def confidence(self, x) -> np.ndarray:
        logits = forward(self.classifier, np.atleast_2d(x))
        return np.exp(log_softmax(logits / self.temperature))

    def __call__(self, x) -> np.ndarray:
        probs = self.confidence(x)
        actions = first_argmax(probs)
        return np.where(probs.max(axis=1) < self.threshold, self.spec.abstain_action, actions)


def oracle_policy(classifier: Mlp, calibration_data, spec: RewardSpec) -> OraclePolicy:
    """Calibrate on (shifted) labeled data, then abstain when max probability < p*."""
    logits = forward(classifier, calibration_data.inputs)
    temperature = fit_temperature(logits, calibration_data.targets)
    return OraclePolicy(classifier, temperature, spec.threshold(), spec)


@dataclass
class PolicyOutcome:
    histogram: np.ndarray
    abstain_rate: float
    mean_reward: float
    accuracy: float  # on non-abstained samples; nan if everything was abstained
    rewards: np.ndarray

    @property
    def reward_stderr(self) -> float:
        n = self.rewards.size
        return float(np.std(self.rewards, ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def evaluate_policy(policy: Policy, data, spec: RewardSpec) -> PolicyOutcome:
    actions = np.asarray(policy(data.inputs), dtype=np.int64)
    labels = np.asarray(data.targets, dtype=np.int64)
    if actions.shape != labels.shape:
        raise ValueError("policy returned the wrong number of actions")
    if actions.min() < 0 or actions.max() > spec.abstain_action:
        raise ValueError("policy returned an invalid action")
    abstain = actions == spec.abstain_action
    rewards = np.where(
        abstain,
        spec.reward_abstain,
        np.where(actions == labels, spec.reward_correct, spec.reward_incorrect),
    )
    hist = np.bincount(actions, minlength=spec.num_actions)
    taken = ~abstain
    acc = float(np.mean(actions[taken] == labels[taken])) if taken.any() else float("nan")
    return PolicyOutcome(hist, float(abstain.mean()), float(rewards.mean()), acc, rewards)
