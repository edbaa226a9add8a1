"""The round-based training driver: train, measure task affinities per view,
cluster, widen one depth, repeat; then train to convergence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .affinity import AffinityMatrix, branch_affinity, compute_indicators, task_affinity
from .architecture import ArchitectureTree, split_layer
from .config import TrainConfig
from .datagen import MultiViewDataset
from .errors import ConfigurationError, TrainingError
from .metrics import compute_metrics
from .mvclustering import SplitDecision, select_branching
from .nets import LayerSpec, ViewSpec, default_plan

logger = logging.getLogger(__name__)


@dataclass
class RoundState:
    t: int = 1
    depth: int | None = None
    b: int = 0
    history: list[dict] = field(default_factory=list)


def view_specs_for(data: MultiViewDataset, cfg: TrainConfig | None = None) -> list[ViewSpec]:
    plans = cfg.view_plans if cfg is not None else None
    if plans is not None and len(plans) != data.m:
        raise ConfigurationError(f"view_plans has {len(plans)} entries for {data.m} views", key="view_plans")
    specs = []
    for i, (modality, shape) in enumerate(zip(data.modalities, data.input_shapes())):
        plan = [LayerSpec.from_dict(x) for x in plans[i]] if plans is not None else default_plan(modality)
        specs.append(ViewSpec(i, modality, shape, plan))
    return specs


def build_model(data: MultiViewDataset, cfg: TrainConfig) -> ArchitectureTree:
    return ArchitectureTree.build(view_specs_for(data, cfg), data.T, seed=cfg.seed, cross_stitch=cfg.cross_stitch)


def loss_on(model: ArchitectureTree, inputs, labels, lambdas) -> ad.Tensor:
    preds = model.forward(inputs)
    return ad.objective([preds], [labels], model.view_weight_groups(), lambdas)


def train_round(model: ArchitectureTree, data: MultiViewDataset, cfg: TrainConfig, epochs: int | None = None,
                rng: np.random.Generator | None = None) -> dict:
    """Mini-batch SGD on the joint objective over the train split."""
    epochs = cfg.epochs_per_round if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if epochs == 0:
        return {"loss": [], "train_accuracy": []}
    idx = data.indices("train")
    if idx.size == 0:
        raise ConfigurationError("dataset has no training examples", key="dataset")
    lambdas = cfg.lambdas_for(data.m)
    params = model.parameters()
    history = []
    last = None
    for epoch in range(epochs):
        total = 0.0
        order = rng.permutation(idx)
        for start in range(0, idx.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            inputs = [x[batch] for x in data.views]
            loss = loss_on(model, inputs, data.labels[batch], lambdas)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"loss diverged in epoch {epoch}", last_finite_loss=last)
            last = value
            ad.backward(loss)
            ad.sgd_step(params, cfg.learning_rate)
            total += value
        history.append(total / idx.size)
    inputs, labels = [x[idx] for x in data.views], data.labels[idx]
    acc = compute_metrics(model.predict(inputs), labels).per_task_accuracy
    return {"loss": history, "train_accuracy": acc}


def view_affinities(model: ArchitectureTree, data: MultiViewDataset, split: str = "valid") -> list[AffinityMatrix]:
    """Task affinity per view from each view's share of the fused prediction on ``split``."""
    idx = data.indices(split)
    if idx.size == 0:
        raise ConfigurationError(f"dataset has no {split!r} examples for affinity estimation", key="dataset")
    inputs, labels = [x[idx] for x in data.views], data.labels[idx]
    out = []
    for v in range(data.m):
        ind = compute_indicators(labels, model.predict_view(inputs, v))
        out.append(task_affinity(ind, view_id=v))
    return out


def validation_loss(model: ArchitectureTree, data: MultiViewDataset, cfg: TrainConfig) -> float:
    idx = data.indices("valid")
    if idx.size == 0:
        idx = data.indices("train")
    inputs, labels = [x[idx] for x in data.views], data.labels[idx]
    return float(loss_on(model, inputs, labels, cfg.lambdas_for(data.m)).data) / idx.size


def train_to_convergence(model, data, cfg, rng) -> dict:
    """Train until validation loss stops improving by ``min_delta`` for
    ``patience`` epochs in a row, or ``max_epochs`` is reached."""
    best = validation_loss(model, data, cfg)
    stale = 0
    losses = []
    epochs = 0
    while epochs < cfg.max_epochs and stale < cfg.patience:
        losses += train_round(model, data, cfg, epochs=1, rng=rng)["loss"]
        epochs += 1
        current = validation_loss(model, data, cfg)
        if best - current < cfg.min_delta:
            stale += 1
        else:
            stale = 0
        best = min(best, current)
    return {"epochs": epochs, "loss": losses, "validation_loss": best}


def widen_once(model: ArchitectureTree, data: MultiViewDataset, cfg: TrainConfig) -> tuple[
        ArchitectureTree, SplitDecision, dict]:
    depth = model.next_split_depth()
    children = model.children(depth)
    task_affs = view_affinities(model, data)
    branch_affs = [branch_affinity(a, children, view_id=a.view_id) for a in task_affs]
    raw, shares = model.view_weights()
    lambdas = shares * cfg.lambda_scale
    p_t = depth if cfg.split_exponent is None else cfg.split_exponent
    decision = select_branching(branch_affs, lambdas, cfg.base_cost, cfg.alpha, p_t,
                                (1, min(len(children), cfg.d_max)), seed=cfg.seed,
                                reduce=cfg.separation_reduce)
    new = split_layer(model, depth, decision.assignment.labels, decision.d)
    info = {
        "depth": depth,
        "children": [list(c) for c in children],
        "task_affinity": [a.entries.tolist() for a in task_affs],
        "branch_affinity": [a.entries.tolist() for a in branch_affs],
        "view_weights": {"raw": raw.tolist(), "shares": shares.tolist()},
        "lambdas": lambdas.tolist(),
        "p_t": p_t,
    }
    return new, decision, info


def deep_mtmv(data: MultiViewDataset, cfg: TrainConfig, model: ArchitectureTree | None = None
              ) -> tuple[ArchitectureTree, list[dict], dict]:
    """Run the widening rounds, then train to convergence.

    Returns the model, one log record per round, and the final training summary.
    """
    model = build_model(data, cfg) if model is None else model
    rng = np.random.default_rng(cfg.seed)
    state = RoundState(t=1, b=data.T)
    while state.t <= cfg.rounds and state.b > 1 and model.next_split_depth() is not None:
        try:
            metrics = train_round(model, data, cfg, rng=rng)
            model, decision, info = widen_once(model, data, cfg)
        except TrainingError as exc:
            raise TrainingError(f"round {state.t}: {exc}", exc.last_finite_loss) from exc
        state.b = decision.d
        state.depth = info["depth"]
        record = {
            "round": state.t,
            "depth": info["depth"],
            "chosen_d": decision.d,
            "loss_table": decision.candidates,
            "assignment": {str(i): int(c) for i, c in enumerate(decision.assignment.labels)},
            "groups": [list(g) for g in model.partition(info["depth"])],
            "view_weights": info["view_weights"],
            "affinities": {"task": info["task_affinity"], "branch": info["branch_affinity"]},
            "lambdas": info["lambdas"],
            "p_t": info["p_t"],
            "metrics": {"epoch_loss": metrics["loss"], "train_accuracy": metrics["train_accuracy"]},
        }
        state.history.append(record)
        logger.info("round %d: depth %d -> %d branches %s", state.t, info["depth"], decision.d, record["groups"])
        state.t += 1
    final = train_to_convergence(model, data, cfg, rng)
    return model, state.history, final


def evaluate(model: ArchitectureTree, data: MultiViewDataset, split: str = "test") -> dict:
    idx = data.indices(split)
    inputs, labels = [x[idx] for x in data.views], data.labels[idx]
    return compute_metrics(model.predict(inputs), labels).to_dict()


def partition_labels(groups: Sequence[Sequence[int]], n_tasks: int) -> list[int]:
    labels = [-1] * n_tasks
    for g, tasks in enumerate(groups):
        for t in tasks:
            labels[t] = g
    return labels
