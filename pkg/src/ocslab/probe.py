"""Representation probes: per-layer norm ratios, top-singular-subspace
projection ratios, and the output produced by bias terms alone."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError
from .netcore import Mlp, forward_from, forward_trace
from .numcore import pairwise_sum, top_right_singular
from .objectives import Ocs, per_sample_distance

ENERGY_FRACTION = 0.9


def _as_inputs(data) -> np.ndarray:
    return np.asarray(getattr(data, "inputs", data), dtype=np.float64)


def layer_energies(model: Mlp, inputs) -> np.ndarray:
    """Mean ||W_i phi_i(x)||^2 for every linear layer i (bias excluded)."""
    trace = forward_trace(model, np.atleast_2d(inputs))
    out = []
    for w, phi in zip(model.weights, trace.inputs):
        sq = np.sum((phi @ w.T) ** 2, axis=1)
        out.append(pairwise_sum(sq) / sq.size)
    return np.array(out)


def norm_ratio(model: Mlp, train_data, ood_data) -> np.ndarray:
    """E_ood ||W_i phi_i||^2 / E_train ||W_i phi_i||^2, one entry per linear layer."""
    train_e = layer_energies(model, _as_inputs(train_data))
    ood_e = layer_energies(model, _as_inputs(ood_data))
    if np.any(train_e == 0):
        bad = int(np.flatnonzero(train_e == 0)[0])
        raise DegenerateError(f"training-side expectation is zero at layer {bad}")
    return ood_e / train_e


def default_subspace_size(sigmas: np.ndarray, fraction: float = ENERGY_FRACTION) -> int:
    """Smallest k whose leading singular values hold ``fraction`` of sum(sigma^2)."""
    energy = np.cumsum(np.asarray(sigmas) ** 2)
    if energy[-1] == 0:
        return 1
    return int(np.searchsorted(energy / energy[-1], fraction - 1e-12) + 1)


@dataclass
class ProjectionResult:
    ratios: np.ndarray
    k: int
    excluded: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.ratios))

    @property
    def std(self) -> float:
        return float(np.std(self.ratios))


def projection_ratio(model: Mlp, data, layer: int | None = None, k: int | None = None) -> ProjectionResult:
    """||V_top V_top^T phi_j||^2 / ||phi_j||^2 per sample, V_top = top-k right
    singular vectors of W_j. Samples with phi_j = 0 are dropped and counted.
    """
    j = model.depth - 2 if layer is None else layer
    if not 0 <= j < model.depth:
        raise ValueError(f"layer {j} out of range")
    w = model.weights[j]
    if k is None:
        full = min(w.shape)
        _, sigmas = top_right_singular(w, full)
        k = default_subspace_size(sigmas)
    if not 1 <= k <= min(w.shape):
        raise ValueError(f"k={k} out of range for a {w.shape} weight")
    basis, _ = top_right_singular(w, k)
    phi = forward_trace(model, np.atleast_2d(_as_inputs(data))).inputs[j]
    total = np.sum(phi**2, axis=1)
    keep = total > 0
    if not np.any(keep):
        raise DegenerateError("every representation at this layer is zero")
    captured = np.sum((phi[keep] @ basis) ** 2, axis=1)
    ratios = np.clip(captured / total[keep], 0.0, 1.0)
    return ProjectionResult(ratios, k, int(np.sum(~keep)))


def projection_ratio_of(phi: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Projection ratio for explicit representations and an orthonormal basis."""
    phi = np.atleast_2d(phi)
    return np.sum((phi @ basis) ** 2, axis=1) / np.sum(phi**2, axis=1)


def accumulate_constants(model: Mlp, layer: int | None = None) -> np.ndarray:
    """Network output when the representation entering ``layer`` is zero,
    i.e. the remaining layers applied to relu(b_layer)."""
    k = model.depth - 2 if layer is None else layer
    if model.depth == 1 and layer is None:
        k = 0
    if not 0 <= k < model.depth:
        raise ValueError(f"layer {k} out of range for depth {model.depth}")
    return forward_from(model, k, np.zeros(model.layer_sizes[k]))


@dataclass
class ProbeReport:
    norm_ratios: np.ndarray
    projection: ProjectionResult
    constants: np.ndarray
    constants_distance: float | None


def probe(model: Mlp, train_data, ood_data, ocs: Ocs | None = None, projection_layer=None,
          k=None, constants_layer=None) -> ProbeReport:
    const = accumulate_constants(model, constants_layer)
    dist = None if ocs is None else float(per_sample_distance(const, ocs)[0])
    return ProbeReport(
        norm_ratio(model, train_data, ood_data),
        projection_ratio(model, ood_data, projection_layer, k),
        const,
        dist,
    )
