"""End-to-end sweeps: train per seed, corrupt the holdout at each shift level,
measure, and collect rows keyed by (seed, level) in sorted order."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..datagen import Dataset, ShiftSpec, apply_shift, load_digits_dataset, load_idx, make_blobs, split
from ..decide import (
    RewardSpec,
    classifier_policy,
    evaluate_policy,
    oracle_policy,
    reward_policy,
)
from ..errors import ConfigError, OcsLabError, SweepError
from ..flowlab import (
    FlowConfig,
    gradient_flow,
    make_bias_probe,
    make_homogeneous_net,
    make_separable,
)
from ..netcore import Mlp, TrainConfig, forward, init_mlp, mean_loss, train
from ..numcore import spearman, stable_rank
from ..objectives import CE, GAUSSIAN_NLL, MSE_REWARD, LossSpec, compute_ocs, distance_to_ocs, per_sample_distance
from ..probe import accumulate_constants, norm_ratio, projection_ratio
from ..shiftmeter import OodScoreConfig, ood_score
from .config import ExperimentConfig
from .report import SummaryRow, SweepRow

THREADS_ENV = "OCSLAB_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def map_keyed(fn, keys) -> list:
    """Apply ``fn`` to every key, possibly concurrently; results come back in
    sorted key order so the worker count never changes the output."""
    keys = sorted(keys)
    workers = min(worker_count(), len(keys))
    if workers <= 1:
        return [fn(k) for k in keys]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, keys))


# --- building blocks ----------------------------------------------------------


def load_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    d = cfg.data
    if d.kind == "digits":
        data = load_digits_dataset()
    elif d.kind == "blobs":
        data = make_blobs(d.num_classes, d.dim, d.per_class, d.separation, seed)
    else:
        data = load_idx(d.images, d.labels)
    if d.max_samples is not None and d.max_samples < len(data):
        data = data.subset(np.arange(d.max_samples))
    return data


def num_classes(data: Dataset) -> int:
    return int(np.max(data.targets)) + 1


def make_loss(kind: str, classes: int, cfg: ExperimentConfig | None = None) -> LossSpec:
    if kind == CE:
        return LossSpec.cross_entropy(classes)
    if kind == GAUSSIAN_NLL:
        return LossSpec.gaussian_nll()
    p = cfg.policy if cfg is not None else None
    if p is None:
        return LossSpec.mse_reward(classes)
    return LossSpec.mse_reward(classes, p.reward_correct, p.reward_incorrect, p.reward_abstain)


def loss_targets(loss: LossSpec, data: Dataset) -> np.ndarray:
    """What the network is trained against: labels, a reward table, or real labels."""
    if loss.kind == CE:
        return data.targets.astype(np.int64)
    if loss.kind == MSE_REWARD:
        return loss.reward_table(data.targets)
    return data.targets.astype(np.float64)[:, None]


def fit_model(cfg: ExperimentConfig, loss: LossSpec, data: Dataset, seed: int) -> tuple[Mlp, list]:
    sizes = [data.dim] + list(cfg.hidden) + [loss.output_width]
    t = cfg.train
    opt = TrainConfig(lr=t.lr, batch_size=t.batch_size, steps=t.steps, seed=seed, weight_decay=t.weight_decay)
    return train(init_mlp(sizes, seed), data.inputs, loss_targets(loss, data), loss, opt)


def ood_config(cfg: ExperimentConfig, seed: int) -> OodScoreConfig:
    o = cfg.ood
    return OodScoreConfig(seed=seed, holdout_frac=o.holdout_frac, steps=o.steps, lr=o.lr, l2=o.l2)


def _shifted(cfg, holdout, level, seed, model, loss) -> Dataset:
    return apply_shift(holdout, ShiftSpec(cfg.shift.kind, float(level), seed), model=model, loss=loss)


def _guard(seed, level, stage, fn, *args):
    try:
        return fn(*args)
    except SweepError:
        raise
    except (OcsLabError, ValueError, ArithmeticError) as exc:
        where = f"seed {seed}" + ("" if level is None else f", level {level}")
        raise SweepError(f"{stage} failed at {where}: {exc}", seed=seed, level=level) from exc


@dataclass
class SweepResult:
    rows: list
    summary: list[SummaryRow] = field(default_factory=list)

    def statistic(self, name: str) -> dict[int, float]:
        return {s.seed: s.value for s in self.summary if s.statistic == name}


def _finite(v) -> float | None:
    v = float(v)
    return v if math.isfinite(v) else None


# --- reversion -----------------------------------------------------------------


def _reversion_seed(cfg: ExperimentConfig, seed: int):
    data = load_dataset(cfg, seed)
    train_set, holdout = split(data, cfg.data.holdout_frac, seed)
    loss = make_loss(cfg.loss, num_classes(data), cfg)
    model, _ = _guard(seed, None, "training", fit_model, cfg, loss, train_set, seed)
    ocs = compute_ocs(loss, loss_targets(loss, train_set))
    rows = []
    for level in cfg.shift.levels:
        def measure(level=level):
            ev = _shifted(cfg, holdout, level, seed, model, loss)
            out = forward(model, ev.inputs)
            score = ood_score(train_set.inputs, ev.inputs, ood_config(cfg, seed)).score
            row = SweepRow(
                seed=seed,
                shift_kind=cfg.shift.kind,
                shift_level=float(level),
                ood_score=score,
                dist_to_ocs=distance_to_ocs(out, ocs),
                mean_loss=mean_loss(model, ev.inputs, loss_targets(loss, ev), loss),
            )
            if loss.kind == CE:
                row.accuracy = float(np.mean(np.argmax(out, axis=1) == ev.targets))
            elif loss.kind == MSE_REWARD:
                row.accuracy = float(np.mean(np.argmax(out[:, :-1], axis=1) == ev.targets))
            else:
                row.mean_sigma = float(np.mean(np.exp(out[:, 1])))
            return row

        rows.append(_guard(seed, level, "measurement", measure))

    summary = [SummaryRow(seed, "holdout_dist_to_ocs", distance_to_ocs(forward(model, holdout.inputs), ocs))]
    if len(rows) >= 2:
        levels = [r.shift_level for r in rows]
        scores = [r.ood_score for r in rows]
        summary.append(SummaryRow(seed, "spearman_score_dist", spearman(scores, [r.dist_to_ocs for r in rows])))
        summary.append(SummaryRow(seed, "spearman_level_score", spearman(levels, scores)))
        if loss.kind == GAUSSIAN_NLL:
            summary.append(SummaryRow(seed, "spearman_level_sigma", spearman(levels, [r.mean_sigma for r in rows])))
    return rows, summary


def run_reversion_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Distance to the OCS against OOD score over the shift grid, per seed."""
    parts = map_keyed(lambda s: _reversion_seed(cfg, s), cfg.seeds)
    return SweepResult([r for rows, _ in parts for r in rows], [s for _, summ in parts for s in summ])


# --- probes --------------------------------------------------------------------


def final_probe_layer(model: Mlp) -> int:
    """The last hidden linear layer (the one feeding the output layer's input)."""
    return max(model.depth - 2, 0)


def _probe_seed(cfg: ExperimentConfig, seed: int):
    data = load_dataset(cfg, seed)
    train_set, holdout = split(data, cfg.data.holdout_frac, seed)
    loss = make_loss(cfg.loss, num_classes(data), cfg)
    model, _ = _guard(seed, None, "training", fit_model, cfg, loss, train_set, seed)
    ocs = compute_ocs(loss, loss_targets(loss, train_set))
    p = cfg.probe
    rows = []
    for level in cfg.shift.levels:
        def measure(level=level):
            ev = _shifted(cfg, holdout, level, seed, model, loss)
            ratios = norm_ratio(model, holdout, ev)
            proj = projection_ratio(model, ev, p.projection_layer, p.k)
            row = {
                "seed": seed,
                "shift_kind": cfg.shift.kind,
                "shift_level": float(level),
                "ood_score": ood_score(train_set.inputs, ev.inputs, ood_config(cfg, seed)).score,
                "dist_to_ocs": distance_to_ocs(forward(model, ev.inputs), ocs),
                "proj_mean": proj.mean,
                "proj_std": proj.std,
                "proj_k": proj.k,
                "proj_excluded": proj.excluded,
            }
            for i, r in enumerate(ratios):
                row[f"norm_ratio_{i}"] = float(r)
            return row

        rows.append(_guard(seed, level, "probe", measure))

    const = accumulate_constants(model, p.constants_layer)
    summary = [SummaryRow(seed, "constants_dist_to_ocs", float(per_sample_distance(const[None, :], ocs)[0]))]
    if len(rows) >= 2:
        j = final_probe_layer(model)
        levels = [r["shift_level"] for r in rows]
        summary.append(SummaryRow(seed, "spearman_level_norm_ratio", spearman(levels, [r[f"norm_ratio_{j}"] for r in rows])))
        summary.append(SummaryRow(seed, "spearman_score_dist", spearman([r["ood_score"] for r in rows], [r["dist_to_ocs"] for r in rows])))
    return rows, summary


def run_probe_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Norm ratios (the reference distribution is the clean holdout), projection
    ratios and constant accumulation over the shift grid."""
    parts = map_keyed(lambda s: _probe_seed(cfg, s), cfg.seeds)
    return SweepResult([r for rows, _ in parts for r in rows], [s for _, summ in parts for s in summ])


# --- decisions -----------------------------------------------------------------

POLICIES = ("classifier", "oracle", "reward")


def _decision_seed(cfg: ExperimentConfig, seed: int):
    data = load_dataset(cfg, seed)
    train_set, holdout = split(data, cfg.data.holdout_frac, seed)
    k = num_classes(data)
    pol = cfg.policy
    spec = RewardSpec(k, pol.reward_correct, pol.reward_incorrect, pol.reward_abstain)
    reward_loss = make_loss(MSE_REWARD, k, cfg)
    ce_loss = make_loss(CE, k)
    reward_model, _ = _guard(seed, None, "reward-model training", fit_model, cfg, reward_loss, train_set, seed)
    classifier, _ = _guard(seed, None, "classifier training", fit_model, cfg, ce_loss, train_set, seed)
    reward_ocs = compute_ocs(reward_loss, loss_targets(reward_loss, train_set))
    ce_ocs = compute_ocs(ce_loss, train_set.targets)

    rows = []
    for level in cfg.shift.levels:
        def measure(level=level):
            ev = _shifted(cfg, holdout, level, seed, classifier, ce_loss)
            test, calib = split(ev, pol.calibration_frac, seed)
            score = ood_score(train_set.inputs, test.inputs, ood_config(cfg, seed)).score
            oracle = oracle_policy(classifier, calib, spec)
            logits = forward(classifier, test.inputs)
            measured = {
                "classifier": (classifier_policy(classifier, spec),
                               distance_to_ocs(logits, ce_ocs),
                               mean_loss(classifier, test.inputs, test.targets, ce_loss)),
                "oracle": (oracle,
                           distance_to_ocs(logits / oracle.temperature, ce_ocs),
                           _scaled_ce(logits / oracle.temperature, test.targets)),
                "reward": (reward_policy(reward_model, spec),
                           distance_to_ocs(forward(reward_model, test.inputs), reward_ocs),
                           mean_loss(reward_model, test.inputs, loss_targets(reward_loss, test), reward_loss)),
            }
            out = []
            for name in POLICIES:
                policy, dist, lval = measured[name]
                res = evaluate_policy(policy, test, spec)
                out.append(SweepRow(
                    seed=seed,
                    shift_kind=cfg.shift.kind,
                    shift_level=float(level),
                    ood_score=score,
                    dist_to_ocs=dist,
                    mean_loss=lval,
                    accuracy=_finite(res.accuracy),
                    mean_reward=res.mean_reward,
                    abstain_rate=res.abstain_rate,
                    policy=name,
                    reward_stderr=res.reward_stderr,
                ))
            return out

        rows.extend(_guard(seed, level, "decision evaluation", measure))

    rates = [r.abstain_rate for r in rows if r.policy == "reward"]
    summary = [
        SummaryRow(seed, "reward_abstain_nondecreasing", float(all(b >= a for a, b in zip(rates, rates[1:])))),
        SummaryRow(seed, "reward_abstain_at_max_level", rates[-1]),
        SummaryRow(seed, "classifier_abstain_max", max(r.abstain_rate for r in rows if r.policy == "classifier")),
        SummaryRow(seed, "oracle_threshold", spec.threshold()),
    ]
    return rows, summary


def _scaled_ce(logits: np.ndarray, labels) -> float:
    from ..numcore import log_softmax

    lp = log_softmax(logits)
    return float(-np.mean(lp[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)]))


def run_decision_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Reward-prediction, plain-classifier and calibrated-oracle policies over the shift grid."""
    parts = map_keyed(lambda s: _decision_seed(cfg, s), cfg.seeds)
    return SweepResult([r for rows, _ in parts for r in rows], [s for _, summ in parts for s in summ])


def pooled_ordering(rows, level: float, better: str, worse: str) -> tuple[float, float]:
    """(mean reward gap better - worse, its standard error), pooled over seeds.

    Seeds carry equal-size test sets, so the pooled mean is the mean of seed
    means and its variance is the mean of seed variances over the seed count.
    """
    def pick(name):
        sel = [r for r in rows if r.policy == name and r.shift_level == level]
        if not sel:
            raise ValueError(f"no rows for policy {name!r} at level {level}")
        return np.array([r.mean_reward for r in sel]), np.array([r.reward_stderr for r in sel])

    mb, sb = pick(better)
    mw, sw = pick(worse)
    n = mb.size
    gap = float(mb.mean() - mw.mean())
    se = float(math.sqrt(np.sum(sb**2) + np.sum(sw**2)) / n)
    return gap, se


# --- homogeneous-network flow ----------------------------------------------------


@dataclass
class FlowRow:
    seed: int
    depth: int
    step: int
    loss: float
    min_margin: float
    normalized_margin: float
    mean_stable_rank: float
    bias: float
    margin_label_sum: float
    min_chain_slack: float


def flow_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    f = cfg.flow
    if f.data == "bias_probe":
        return make_bias_probe(f.n, f.dim, seed)
    return make_separable(f.n, f.dim, seed, f.margin)


def _mean_hidden(ranks: list[float]) -> float:
    inner = ranks[1:-1] or ranks
    return float(np.mean(inner))


def _flow_item(cfg: ExperimentConfig, key):
    seed, depth = key
    f = cfg.flow
    fc = FlowConfig(depth=depth, width=f.width, lr=f.lr, steps=f.steps, seed=seed,
                    final_bias=f.final_bias, init_scale=f.init_scale, checkpoints=f.checkpoints)
    data = flow_dataset(cfg, seed)
    net, report = _guard(seed, None, f"flow (depth {depth})", gradient_flow, make_homogeneous_net(fc, data.dim), data, fc)
    rows = [
        FlowRow(seed, depth, c.step, c.loss, c.min_margin, c.normalized_margin, _mean_hidden(c.stable_ranks),
                c.bias, c.margin_label_sum, min(c.chain_slack))
        for c in report.checkpoints
    ]
    fin = report.final
    summary = [
        SummaryRow(seed, f"mean_stable_rank_L{depth}", _mean_hidden([stable_rank(w) for w in net.weights])),
        SummaryRow(seed, f"min_chain_slack_L{depth}", min(min(c.chain_slack) for c in report.checkpoints)),
    ]
    if f.final_bias:
        fitted = fin.min_margin > 0
        match = fitted and np.sign(fin.bias) == np.sign(fin.margin_label_sum) and fin.bias != 0
        summary.append(SummaryRow(seed, f"bias_sign_match_L{depth}", float(match)))
    return rows, summary


def run_flow_sweep(cfg: ExperimentConfig) -> SweepResult:
    keys = [(s, d) for s in cfg.seeds for d in cfg.flow.depths]
    parts = map_keyed(lambda k: _flow_item(cfg, k), keys)
    rows = [r for rows, _ in parts for r in rows]
    summary = sorted((s for _, summ in parts for s in summ), key=lambda s: (s.seed, s.statistic))
    return SweepResult(rows, summary)


# --- single training run ----------------------------------------------------------


def run_training(cfg: ExperimentConfig, seed: int):
    """Train one model on the configured data; returns (model, loss, history)."""
    data = load_dataset(cfg, seed)
    train_set, _ = split(data, cfg.data.holdout_frac, seed)
    loss = make_loss(cfg.loss, num_classes(data), cfg)
    model, history = _guard(seed, None, "training", fit_model, cfg, loss, train_set, seed)
    return model, loss, history
