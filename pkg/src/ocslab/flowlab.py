"""Small-step gradient descent on deep bias-free ReLU networks with the
exponential loss, and the measurements used to check the homogeneous-network
theory: margins, stable ranks, feature-norm chain bounds, and the sign of a
learned output bias."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .errors import DivergenceError, NotFittedError
from .netcore import Mlp, _backprop, forward, forward_trace, init_mlp
from .numcore import make_rng, operator_norm, spearman, stable_rank, top_right_singular

MAX_LR = 1e-2


@dataclass
class FlowConfig:
    depth: int = 3
    width: int = 32
    lr: float = 1e-2
    steps: int = 20_000
    seed: int = 0
    final_bias: bool = False
    init_scale: float = 1.0
    checkpoints: int = 25
    arc_length: bool = False  # fixed-length steps along the flow direction

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if not 0 < self.lr <= MAX_LR:
            raise ValueError(f"lr must be in (0, {MAX_LR}] to approximate gradient flow")


def check_flow_data(data: Dataset) -> None:
    y = np.asarray(data.targets, dtype=np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("flow labels must be -1 or +1")
    if np.any(np.linalg.norm(data.inputs, axis=1) > 1 + 1e-12):
        raise ValueError("flow inputs must have norm <= 1")


def make_separable(n: int, d: int, seed: int, margin: float = 0.1) -> Dataset:
    """Points in the unit ball labelled by a random hyperplane through the origin,
    with a gap of ``margin`` around it."""
    rng = make_rng(seed)
    normal = rng.standard_normal(d)
    normal /= np.linalg.norm(normal)
    xs = []
    while len(xs) < n:
        x = rng.standard_normal(d)
        x *= rng.uniform() ** (1 / d) / np.linalg.norm(x)
        if abs(x @ normal) >= margin:
            xs.append(x)
    x = np.array(xs)
    return Dataset(x, np.sign(x @ normal).astype(np.float64))


def make_bias_probe(n: int, d: int, seed: int, inner_radius: float = 0.05) -> Dataset:
    """Separable data whose closest-to-boundary points are all positive.

    Negatives lie on the unit sphere in a cone around a random direction;
    positives sit close to the origin. A homogeneous net maps small inputs to
    small outputs, so the positives become the margin points.
    """
    rng = make_rng(seed)
    axis = rng.standard_normal(d)
    axis /= np.linalg.norm(axis)
    half = n // 2
    neg = axis + 0.3 * rng.standard_normal((half, d))
    neg /= np.linalg.norm(neg, axis=1, keepdims=True)
    pos = rng.standard_normal((n - half, d))
    pos *= inner_radius * rng.uniform(0.5, 1.0, (n - half, 1)) / np.linalg.norm(pos, axis=1, keepdims=True)
    x = np.vstack([neg, pos])
    y = np.concatenate([-np.ones(half), np.ones(n - half)])
    order = rng.permutation(n)
    return Dataset(x[order], y[order])


def make_homogeneous_net(cfg: FlowConfig, input_dim: int) -> Mlp:
    """``input_dim -> width -> ... -> width -> 1`` with ``cfg.depth`` weight layers, no biases
    (except a scalar output bias when ``cfg.final_bias``)."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    sizes = [input_dim] + [cfg.width] * (cfg.depth - 1) + [1]
    return init_mlp(sizes, cfg.seed, bias_mode="final" if cfg.final_bias else "none", scale=cfg.init_scale)


def homogeneous_part(net: Mlp) -> Mlp:
    """The same network with every bias removed."""
    out = net.copy()
    out.biases = [np.zeros_like(b) for b in out.biases]
    out.bias_mode = "none"
    return out


def output_bias(net: Mlp) -> float:
    return float(net.biases[-1][0])


def margins(net: Mlp, data: Dataset) -> np.ndarray:
    """y_i * f(x_i), including any output bias."""
    return np.asarray(data.targets, dtype=np.float64) * forward(net, data.inputs)[:, 0]


def exp_loss(net: Mlp, data: Dataset) -> float:
    return float(np.mean(np.exp(-margins(net, data))))


def exp_loss_grads(net: Mlp, data: Dataset, normalized: bool = False):
    """Gradients of the mean exponential loss and the loss value.

    With ``normalized`` the gradient is divided by the loss (i.e. the gradient
    of log-loss), computed with softmax weights so it never underflows.
    """
    y = np.asarray(data.targets, dtype=np.float64)
    trace = forward_trace(net, data.inputs)
    q = y * trace.output[:, 0]
    if normalized:
        weights = np.exp(-(q - q.min()))
        weights /= weights.sum()
    else:
        weights = np.exp(-q) / y.size
    gw, gb, _ = _backprop(net, trace, (-y * weights)[:, None])
    return gw, gb, float(np.mean(np.exp(-q)))


def margin_points(net: Mlp, data: Dataset, tol_rel: float = 0.01) -> np.ndarray:
    """Indices whose margin is within ``(1 + tol_rel)`` of the smallest margin."""
    q = margins(net, data)
    low = q.min()
    if low <= 0:
        raise NotFittedError(f"network does not fit the data (min margin {low:.3g})")
    return np.flatnonzero(q <= (1 + tol_rel) * low)


def weight_norm_product(net: Mlp, start: int = 0) -> float:
    return float(np.prod([operator_norm(w) for w in net.weights[start:]]))


@dataclass
class FlowCheckpoint:
    step: int
    loss: float
    min_margin: float
    normalized_margin: float
    stable_ranks: list[float]
    margin_points: list[int]
    bias: float
    bias_direction: float  # -dL/db; 0 when the net has no output bias
    margin_label_sum: float
    chain_slack: list[float]


@dataclass
class FlowReport:
    checkpoints: list[FlowCheckpoint] = field(default_factory=list)

    @property
    def final(self) -> FlowCheckpoint:
        return self.checkpoints[-1]


def chain_slack(net: Mlp, inputs) -> np.ndarray:
    """For each layer j: (prod_{k>=j} ||W_k||_op) * E||phi_j|| - E|f(x)|.

    ``phi_j`` is the representation entering weight layer j; the output bias is
    excluded from f. ReLU is 1-Lipschitz with relu(0)=0, so every entry is >= 0.
    """
    hom = homogeneous_part(net)
    trace = forward_trace(hom, np.atleast_2d(inputs))
    lhs = np.mean(np.abs(trace.output[:, 0]))
    ops = [operator_norm(w) for w in hom.weights]
    out = []
    for j, phi in enumerate(trace.inputs):
        bound = float(np.prod(ops[j:])) * np.mean(np.linalg.norm(phi, axis=1))
        out.append(bound - lhs)
    return np.array(out)


def _checkpoint(net: Mlp, data: Dataset, step: int, tol_rel: float) -> FlowCheckpoint:
    q = margins(net, data)
    y = np.asarray(data.targets, dtype=np.float64)
    e = np.exp(-q)
    low = float(q.min())
    if low > 0:
        points = np.flatnonzero(q <= (1 + tol_rel) * low)
    else:
        points = np.array([int(np.argmin(q))])
    has_bias = net.bias_mode == "final"
    return FlowCheckpoint(
        step=step,
        loss=float(e.mean()),
        min_margin=low,
        normalized_margin=low / weight_norm_product(net),
        stable_ranks=[stable_rank(w) for w in net.weights],
        margin_points=points.tolist(),
        bias=output_bias(net),
        bias_direction=float(np.mean(y * e)) if has_bias else 0.0,
        margin_label_sum=float(y[points].sum()),
        chain_slack=chain_slack(net, data.inputs).tolist(),
    )


def checkpoint_steps(steps: int, count: int) -> list[int]:
    """Roughly log-spaced step indices in [0, steps], always including both ends."""
    if steps == 0:
        return [0]
    grid = np.unique(np.round(np.geomspace(1, steps, max(count - 1, 1))).astype(int))
    return [0] + grid.tolist()


def gradient_flow(net: Mlp, data: Dataset, cfg: FlowConfig, tol_rel: float = 0.01):
    """Full-batch gradient descent with step ``cfg.lr`` on mean exp(-y f(x)).

    Returns ``(trained_copy, FlowReport)`` with checkpoints at log-spaced steps.
    """
    check_flow_data(data)
    net = net.copy()
    marks = set(checkpoint_steps(cfg.steps, cfg.checkpoints))
    report = FlowReport()
    for step in range(cfg.steps + 1):
        if step in marks:
            report.checkpoints.append(_checkpoint(net, data, step, tol_rel))
        if step == cfg.steps:
            break
        gw, gb, loss = exp_loss_grads(net, data, normalized=cfg.arc_length)
        if not np.isfinite(loss) or loss > 1e10:
            raise DivergenceError(f"gradient flow diverged at step {step}", step)
        if cfg.arc_length:
            norm = np.sqrt(sum(np.sum(g * g) for g in gw + gb))
            if norm == 0:
                break
            gw = [g / norm for g in gw]
            gb = [g / norm for g in gb]
        for i in range(net.depth):
            net.weights[i] -= cfg.lr * gw[i]
            net.biases[i] -= cfg.lr * gb[i]
    return net, report


@dataclass
class TheoryReport:
    chain_slack_train: list[float]
    chain_slack_ood: list[float]
    stable_ranks: list[float]
    rank1_residuals: list[float]
    ood_on_mass_correlation: float
    ood_off_mass_correlation: float
    train_feature_norm: float
    ood_feature_norm: float
    bias: float | None
    margin_label_sum: float | None
    bias_sign_matches: bool | None


def rank1_residual(w: np.ndarray) -> float:
    """||W (I - v v^T)||_F / sigma_1 with v the top right singular vector."""
    basis, sigmas = top_right_singular(w, 1)
    v = basis[:, 0]
    if sigmas[0] == 0:
        return 0.0
    return float(np.linalg.norm(w - np.outer(w @ v, v)) / sigmas[0])


def theory_report(net: Mlp, train_data: Dataset, ood_data: Dataset, layer: int | None = None,
                  tol_rel: float = 0.01) -> TheoryReport:
    """Measured counterparts of the theory's quantities for a trained network.

    ``layer`` selects the representation used for the subspace-mass check
    (default: input to the last weight layer).
    """
    j = net.depth - 1 if layer is None else layer
    hom = homogeneous_part(net)
    w = net.weights[j]
    v = top_right_singular(w, 1)[0][:, 0]
    trace = forward_trace(hom, ood_data.inputs)
    phi = trace.inputs[j]
    on = np.abs(phi @ v)
    off = np.linalg.norm(phi - np.outer(phi @ v, v), axis=1)
    mag = np.abs(trace.output[:, 0])

    train_phi = forward_trace(hom, train_data.inputs).inputs[j]
    bias = margin_sum = matches = None
    if net.bias_mode == "final":
        bias = output_bias(net)
        points = margin_points(net, train_data, tol_rel)
        margin_sum = float(np.asarray(train_data.targets, dtype=np.float64)[points].sum())
        matches = bool(np.sign(bias) == np.sign(margin_sum))
    return TheoryReport(
        chain_slack_train=chain_slack(net, train_data.inputs).tolist(),
        chain_slack_ood=chain_slack(net, ood_data.inputs).tolist(),
        stable_ranks=[stable_rank(m) for m in net.weights],
        rank1_residuals=[rank1_residual(m) for m in net.weights],
        ood_on_mass_correlation=spearman(on, mag) if on.size > 1 else 0.0,
        ood_off_mass_correlation=spearman(off, mag) if off.size > 1 else 0.0,
        train_feature_norm=float(np.mean(np.linalg.norm(train_phi, axis=1))),
        ood_feature_norm=float(np.mean(np.linalg.norm(phi, axis=1))),
        bias=bias,
        margin_label_sum=margin_sum,
        bias_sign_matches=matches,
    )


def mean_hidden_stable_rank(net: Mlp) -> float:
    """Mean stable rank over the square hidden-to-hidden layers (all layers if none)."""
    ranks = [stable_rank(w) for w in net.weights[1:-1]] or [stable_rank(w) for w in net.weights]
    return float(np.mean(ranks))
