"""Objectives, the optimizer and the experiment protocols (base-to-new, few-shot, ablations)."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .errors import ConfigError, DegeneracyError, RangeError, ShapeError
from .linalg import check_simple, svd_thin
from .metrics import harmonic_mean, id_gradient, information_density, spearman
from .model import Logits, cosine_logits, cosine_logits_back
from .prompt import (DipPrompt, FullRankPrompt, effective_prompt, dropout_scale, factor_grads,
                     init_dip, merge)

log = logging.getLogger(__name__)

OBJECTIVES = ("CE_FULLRANK", "ALG1", "ALG2", "ALG3_DIP")
PLACEMENTS = ("text", "image")
INITS = ("template", "zero")


@dataclass
class TrainConfig:
    objective: str = "ALG3_DIP"
    k_order: int = 1
    lam: float = 0.1
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.5
    warmup_lr: float = 0.01
    weight_decay: float = 5e-4
    dropout_p: float = 0.1
    rank: int = 1
    gaussian_sigma: float = 1e-2
    seed: int = 0
    n_ctx: int = 4
    shots: int = 16
    init: str = "template"
    template_seed: int = 0
    placement: str = "text"
    prompt_depth: int = 1
    log_every_iter: bool = False

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.objective in ("ALG1", "ALG2") and not self.lam > 0:
            raise ConfigError(f"{self.objective} needs lambda > 0, got {self.lam}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not (self.lr > 0 and self.warmup_lr > 0):
            raise ConfigError("lr and warmup_lr must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.shots < 1 or self.n_ctx < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, shots >= 1 and n_ctx >= 1 are required")
        if not 1 <= self.k_order <= self.n_ctx:
            raise ConfigError(f"k_order must lie in 1..n_ctx={self.n_ctx}, got {self.k_order}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.weight_decay < 0 or self.gaussian_sigma <= 0:
            raise ConfigError("weight_decay must be >= 0 and gaussian_sigma > 0")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}, got {self.init!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.prompt_depth < 1:
            raise ConfigError("prompt_depth must be >= 1")
        if self.objective == "ALG3_DIP" and self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Record:
    iter: int
    loss: float
    base_acc: float
    new_acc: float | None
    sigma: np.ndarray
    id1: float
    id2: float


@dataclass
class ExperimentLog:
    records: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    prompts: list = field(default_factory=list)
    degenerate_skips: int = 0
    split: object = None


# losses and their gradients

def log_softmax(scores):
    s = scores - scores.max(-1, keepdims=True)
    return s - np.log(np.exp(s).sum(-1, keepdims=True))


def loss_ce(logits, label: int) -> float:
    scores = logits.scores if isinstance(logits, Logits) else np.asarray(logits, dtype=np.float64)
    if not 0 <= label < scores.shape[-1]:
        raise RangeError(f"label {label} outside 0..{scores.shape[-1] - 1}")
    return float(-log_softmax(scores)[label])


def batch_ce(scores, labels):
    """Mean cross-entropy over a batch and its gradient w.r.t. the scores."""
    lp = log_softmax(scores)
    rows = np.arange(len(labels))
    grad = np.exp(lp)
    grad[rows, labels] -= 1.0
    return float(-lp[rows, labels].mean()), grad / len(labels)


def alg1_term(p, k, lam):
    """Value and gradient of -lam * IDk(p)."""
    svd = svd_thin(p)
    value = -lam * information_density(svd.sigma, k)
    if lam == 0:
        return value, np.zeros_like(p)
    return value, -lam * id_gradient(p, k, svd)


def alg2_term(p, k, lam, with_grad=True):
    """Value and gradient of lam * sum_{i=n-k+1..n} i * sigma_i (1-based i)."""
    svd = svd_thin(p)
    n = p.shape[0]
    if not 1 <= k <= n:
        raise RangeError(f"k={k} outside 1..{n}")
    idx = np.arange(n - k, n)
    weights = idx + 1.0
    value = lam * float(weights @ svd.sigma[idx])
    if lam == 0 or not with_grad:
        return value, np.zeros_like(p)
    for i in idx:
        check_simple(svd.sigma, i)
    grad = lam * (svd.u[:, idx] * weights) @ svd.v[:, idx].T
    return value, grad


def loss_alg1(ce, p_effective, k, lam) -> float:
    if lam < 0:
        raise RangeError("lambda must be >= 0")
    if lam == 0:
        return float(ce)
    return float(ce) - lam * information_density(svd_thin(p_effective).sigma, k)


def loss_alg2(ce, p_effective, k, lam) -> float:
    if lam < 0:
        raise RangeError("lambda must be >= 0")
    if lam == 0:
        return float(ce)
    return float(ce) + alg2_term(p_effective, k, lam, with_grad=False)[0]


def sgd_step(params, grads, lr, weight_decay=0.0):
    """In-place ``p <- p - lr * (g + weight_decay * p)``; returns ``params``."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"parameter shape {np.shape(p)} != gradient shape {np.shape(g)}")
        p -= lr * (g + weight_decay * p)
    return params


def lr_schedule(epoch, total_epochs, lr, warmup_lr) -> float:
    """Constant ``warmup_lr`` for epoch 0, then cosine decay from ``lr`` at epoch 1 towards 0.

    The decay reaches 0 at the end of training, so the last epoch still moves.
    """
    if not 0 <= epoch < total_epochs:
        raise RangeError(f"epoch {epoch} outside 0..{total_epochs - 1}")
    if epoch == 0:
        return warmup_lr
    span = total_epochs - 1
    return lr * (1.0 + math.cos(math.pi * (epoch - 1) / span)) / 2.0


# prompt construction

def template_prompt(n, d, seed=0):
    """Seeded pseudo-embedding standing in for a hand-crafted text template."""
    return np.random.default_rng([seed, n, d]).normal(0.0, 1.0 / np.sqrt(d), size=(n, d))


def initial_prompts(config, model, class_ids, rng):
    """Trainable prompt objects, one per prompt layer, for the configured placement."""
    d = model.d_text if config.placement == "text" else model.d_vis
    n = config.n_ctx
    if config.init == "template" and config.placement == "text":
        first = template_prompt(n, d, config.template_seed)
    else:
        first = np.zeros((n, d))
    inits = [first]
    if config.prompt_depth > 1:
        if config.placement != "text":
            raise ConfigError("deep prompts are only supported on the text side")
        if config.prompt_depth > model.m_layers:
            raise ConfigError(f"prompt_depth {config.prompt_depth} exceeds text depth {model.m_layers}")
        inits += _inherited_states(model, first, class_ids, config.prompt_depth)
    prompts = []
    for layer, p_init in enumerate(inits):
        if config.objective == "ALG3_DIP":
            seed = int(rng.integers(2**63))
            prompts.append(init_dip(n, d, config.rank, config.dropout_p, p_init,
                                    config.gaussian_sigma, seed))
        else:
            prompts.append(FullRankPrompt(p_init))
    return prompts


def _inherited_states(model, first, class_ids, depth):
    """Class-averaged prompt-token states entering layers 2..depth under shallow prompting."""
    n = first.shape[0]
    emb = model.class_embeddings[np.asarray(class_ids)]
    x = np.concatenate([np.broadcast_to(first, (len(emb), n, model.d_text)), emb[:, None]], axis=1)
    out = []
    for layer in range(depth - 1):
        x, _ = model.text_blocks[layer].forward(x)
        out.append(x[:, :n].mean(axis=0))
    return out


def param_count(prompts) -> int:
    return int(sum(p.num_trainable for p in prompts))


# training core

class TrainTask:
    """Everything one run needs: which images train, how accuracy is measured."""

    def __init__(self, config, model, dataset, train_idx, train_classes, eval_groups):
        self.config = config
        self.model = model
        self.train_x = dataset.patches[train_idx]
        self.train_classes = np.asarray(train_classes)
        remap = {c: i for i, c in enumerate(train_classes)}
        self.train_y = np.array([remap[c] for c in dataset.labels[train_idx]], dtype=int)
        # eval_groups: list of (classes, patches, labels) scored within their own class set
        self.eval_groups = eval_groups
        self.text_side = config.placement == "text"
        self.fixed_text = None
        if self.text_side:
            self.train_feats, _ = model.image_features(self.train_x)
            self.eval_feats = [model.image_features(x)[0] if len(x) else None for _, x, _ in eval_groups]
        else:
            n = config.n_ctx
            p = template_prompt(n, model.d_text, config.template_seed) if config.init == "template" \
                else np.zeros((n, model.d_text))
            self.fixed_text = p

    def scores(self, prompt_mats, x_feats_or_patches, classes, with_cache=False):
        model = self.model
        if self.text_side:
            fl, tcache = model.text_features(prompt_mats, classes)
            fv, vcache = x_feats_or_patches, None
        else:
            fl, tcache = model.text_features([self.fixed_text], classes)
            fv, vcache = model.image_features(x_feats_or_patches, prompt_mats)
        s, scache = cosine_logits(fv, fl, model.tau)
        return s, (tcache, vcache, scache)

    def backward(self, grad_scores, caches):
        tcache, vcache, scache = caches
        g_img, g_txt = cosine_logits_back(grad_scores, scache)
        if self.text_side:
            return self.model.text_backward(g_txt, tcache)
        return self.model.image_backward(g_img, vcache)

    def evaluate(self, merged):
        accs = []
        for (classes, x, y), feats in zip(self.eval_groups, self._eval_inputs()):
            if len(y) == 0:
                accs.append(None)
                continue
            s, _ = self.scores(merged, feats, classes)
            pred = np.asarray(classes)[np.argmax(s, axis=1)]
            accs.append(100.0 * float(np.mean(pred == y)))
        return accs

    def _eval_inputs(self):
        if self.text_side:
            return self.eval_feats
        return [x for _, x, _ in self.eval_groups]


def objective_and_grads(config, task, prompts, x, labels, scales):
    """Training loss of one batch and its gradient for every trainable array.

    Returns ``(loss, grads, skipped)`` where ``grads[j]`` lines up with
    ``prompts[j].params()`` and ``skipped`` counts prompts whose regularizer was
    dropped because of a degenerate spectrum.
    """
    mats = [effective_prompt(p, "train", scale=s) for p, s in zip(prompts, scales)]
    s, caches = task.scores(mats, x, task.train_classes)
    loss, g_scores = batch_ce(s, labels)
    g_mats = task.backward(g_scores, caches)
    skipped = 0
    if config.objective in ("ALG1", "ALG2"):
        term = alg1_term if config.objective == "ALG1" else alg2_term
        for j, mat in enumerate(mats):
            try:
                value, g_reg = term(mat, config.k_order, config.lam)
            except DegeneracyError:
                skipped += 1
                continue
            loss += value
            g_mats[j] = g_mats[j] + g_reg
    grads = [factor_grads(p, g, sc) for p, g, sc in zip(prompts, g_mats, scales)]
    return loss, grads, skipped


def _spectrum_record(merged_first):
    p = merged_first if merged_first.shape[0] <= merged_first.shape[1] else merged_first.T
    sigma = np.array(svd_thin(p).sigma)
    if sigma[0] == 0:
        return sigma, float("nan"), float("nan")
    id1 = information_density(sigma, 1)
    id2 = information_density(sigma, min(2, len(sigma)))
    return sigma, id1, id2


def _fit(config, task, log_obj):
    rng = np.random.default_rng(config.seed)
    init_rng, shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(3))
    prompts = initial_prompts(config, task.model, task.train_classes, init_rng)
    log_obj.prompts = prompts
    frozen_inits = [p.p_init.copy() for p in prompts if isinstance(p, DipPrompt)]
    n_train = len(task.train_y)
    iters_per_epoch = max(1, math.ceil(n_train / config.batch_size))

    def record(it, loss):
        merged = [merge(p) for p in prompts]
        base, new = task.evaluate(merged)
        sigma, id1, id2 = _spectrum_record(merged[0])
        log_obj.records.append(Record(it, loss, base, new, sigma, id1, id2))

    record(0, float("nan"))
    it = 0
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.epochs, config.lr, config.warmup_lr)
        order = shuffle_rng.permutation(n_train)
        losses = []
        for start in range(0, n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = task.train_feats[idx] if task.text_side else task.train_x[idx]
            scales = [dropout_scale(p.p_init.shape, p.dropout_p, dropout_rng)
                      if isinstance(p, DipPrompt) else None for p in prompts]
            loss, grads, skipped = objective_and_grads(config, task, prompts, x, task.train_y[idx], scales)
            if skipped:
                log_obj.degenerate_skips += skipped
                log.warning("iteration %d: regularizer skipped on %d degenerate prompt(s)", it, skipped)
            for p, g in zip(prompts, grads):
                sgd_step(p.params(), g, lr, config.weight_decay)
            it += 1
            losses.append(loss)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at iteration {it}")
            if config.log_every_iter:
                record(it, loss)
        if not config.log_every_iter:
            record(it, float(np.mean(losses)))
    for p, init in zip([p for p in prompts if isinstance(p, DipPrompt)], frozen_inits):
        assert np.array_equal(p.p_init, init)
    return prompts, iters_per_epoch


def _finalize(log_obj, prompts, warmup_iters):
    last = log_obj.records[-1]
    base, new = last.base_acc, last.new_acc
    final = {"base_acc": base, "new_acc": new, "param_count": param_count(prompts),
             "spearman_from_iter": warmup_iters + 1, "degenerate_skips": log_obj.degenerate_skips}
    if new is not None:
        final["harmonic_mean"] = harmonic_mean(base, new) if base > 0 and new > 0 else 0.0
        post = [r for r in log_obj.records if r.iter > warmup_iters]
        for key in ("id1", "id2"):
            try:
                rho = spearman([getattr(r, key) for r in post], [r.new_acc for r in post])
            except (ShapeError, ArithmeticError):
                rho = None
            final[f"spearman_{key}_newacc"] = rho
    final["id1"], final["id2"] = last.id1, last.id2
    log_obj.final = final
    return log_obj


def base_to_new_task(config, dataset, model):
    """The base-to-new training task and its class split."""
    model = model.with_classes(dataset.class_embeddings)
    split = data_mod.split_base_new(dataset, config.seed)
    train_idx = data_mod.sample_shots(dataset, split.base_classes, config.shots, config.seed)
    groups = []
    for classes in (split.base_classes, split.new_classes):
        mask = np.isin(dataset.test_labels, classes)
        groups.append((list(classes), dataset.test_patches[mask], dataset.test_labels[mask]))
    return TrainTask(config, model, dataset, train_idx, list(split.base_classes), groups), split


def run_base_to_new(config, dataset, model) -> ExperimentLog:
    """Train on the base half of the classes; track base and new accuracy and the prompt spectrum."""
    task, split = base_to_new_task(config, dataset, model)
    out = ExperimentLog()
    prompts, ipe = _fit(config, task, out)
    out.split = split
    return _finalize(out, prompts, ipe)


def run_all_classes(config, dataset, model, train_idx=None) -> ExperimentLog:
    """Train and test on every class (the few-shot setting); accuracy lands in ``base_acc``."""
    model = model.with_classes(dataset.class_embeddings)
    classes = list(range(dataset.c_total))
    if train_idx is None:
        train_idx = np.arange(len(dataset.labels))
    groups = [(classes, dataset.test_patches, dataset.test_labels), (classes, dataset.test_patches[:0],
                                                                      dataset.test_labels[:0])]
    task = TrainTask(config, model, dataset, train_idx, classes, groups)
    out = ExperimentLog()
    prompts, ipe = _fit(config, task, out)
    return _finalize(out, prompts, ipe)


def fewshot_runs(config, dataset, shots_list, model):
    """Yield ``(shots, ExperimentLog)`` per shot count, all classes visible."""
    for shots in shots_list:
        idx = data_mod.sample_shots(dataset, range(dataset.c_total), shots, config.seed)
        yield shots, run_all_classes(config.replace(shots=shots), dataset, model, idx)


def run_fewshot(config, dataset, shots_list, model) -> list[dict]:
    """One trained prompt and test accuracy per shot count; one row per entry of ``shots_list``."""
    return [{"shots": shots, "accuracy": result.final["base_acc"], "params": result.final["param_count"]}
            for shots, result in fewshot_runs(config, dataset, shots_list, model)]


ABLATION_AXES = ("rank", "dropout", "epochs", "depth", "placement")


def ablation_config(axis, value, base_config):
    if axis == "rank":
        if int(value) < 1:
            raise RangeError(f"rank must be >= 1, got {value}")
        return base_config.replace(objective="ALG3_DIP", rank=int(value))
    if axis == "dropout":
        if not 0 <= float(value) < 1:
            raise RangeError(f"dropout must lie in [0, 1), got {value}")
        return base_config.replace(dropout_p=float(value))
    if axis == "epochs":
        if int(value) < 0:
            raise RangeError(f"epochs must be >= 0, got {value}")
        return base_config.replace(epochs=int(value))
    if axis == "depth":
        if int(value) < 1:
            raise RangeError(f"depth must be >= 1, got {value}")
        return base_config.replace(prompt_depth=int(value))
    if axis == "placement":
        if value not in PLACEMENTS:
            raise RangeError(f"placement must be one of {PLACEMENTS}, got {value!r}")
        return base_config.replace(placement=value)
    raise RangeError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def run_ablation(axis, values, base_config, dataset, model) -> list[dict]:
    """One base/new/H row per value along ``axis``."""
    if axis == "placement":
        values = list(values) if values else list(PLACEMENTS)
        if sorted(values) != sorted(PLACEMENTS):
            raise RangeError("placement ablation takes exactly the values 'text' and 'image'")
    configs = [ablation_config(axis, v, base_config) for v in values]
    rows = []
    for value, cfg in zip(values, configs):
        m = model
        if axis == "depth" and cfg.prompt_depth > model.prompt_depth:
            m = dataclasses.replace(model, prompt_depth=cfg.prompt_depth)
        result = run_base_to_new(cfg, dataset, m)
        f = result.final
        rows.append({"axis": axis, "value": value, "params": f["param_count"],
                     "base": f["base_acc"], "new": f["new_acc"], "H": f["harmonic_mean"]})
    return rows
