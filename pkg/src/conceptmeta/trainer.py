"""Episodic meta-training.

One optimizer step per sampled pseudo task: forward the mode's posterior on
every query instance, take the mean negative log-likelihood (classification)
or mean squared error (regression), add the concept-head regularizer, run
backward, and apply the adaptive-moment update. Gradients are reset
explicitly at the top of every episode; ``backward`` otherwise accumulates.

The mixed-concept regression path supports a few-shot initialization: a
small concept-labeled seed set supervises the instance selector with
cross-entropy before the confusing stream starts. The warm-up declares the
parameters it touches (the selector network) and updates nothing else.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import mct, sct
from .autodiff import Tensor
from .exceptions import ConfigError, DimensionError, TrainingDiverged
from .model import ModelParams
from .posterior import BatchedEpisode


class Adam:
    """Standard adaptive-moment estimation over named parameter tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} of shape {p.data.shape}")
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def regularizer_omega(m: ModelParams, kappas, form="entropy", lam=0.01) -> Tensor:
    """Concept-head regularizer over a batch of kappa rows.

    ``entropy`` penalizes the mean entropy of the batch (drives instance
    concept probabilities away from uniform); ``none`` or ``lam == 0``
    contributes exactly zero and is the acceptance-suite setting.
    """
    if form not in ("none", "entropy"):
        raise ConfigError([f"unknown regularizer form {form!r}"])
    if form == "none" or lam == 0.0:
        return Tensor(0.0)
    if isinstance(kappas, list):
        kappas = ad.stack(kappas)
    n = kappas.data.shape[0]
    ent = ad.neg(ad.div(ad.tsum(ad.mul(kappas, ad.log(kappas))), float(n)))
    return ad.mul(Tensor(float(lam)), ent)


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    val_points: list = field(default_factory=list)  # (episode index, metric)
    wall_time_s: float = 0.0
    config_hash: str = ""
    final_val: float | None = None

    def write(self, path):
        lines = [f"# config_hash={self.config_hash}",
                 f"# wall_time_s={self.wall_time_s:.3f}",
                 f"# final_val={'' if self.final_val is None else repr(self.final_val)}",
                 "section,step,value"]
        lines += [f"loss,{i},{v!r}" for i, v in enumerate(self.losses)]
        lines += [f"val,{i},{v!r}" for i, v in self.val_points]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# -- per-episode losses -------------------------------------------------------


def _nll(posterior, label):
    idx = posterior.classes.index(label)
    return ad.neg(ad.log(ad.index(posterior.probs, idx)))


def episode_loss_classification(m, ep, mode, collect_aux=None, need_kappas=False,
                                triplet_cap=sct.TRIPLET_CAP):
    """Mean query NLL under the mode's posterior; also returns kappa rows.

    Baseline and sct minimize the (renormalized) posterior NLL; mct minimizes
    the negative log of the unnormalized selector-weighted likelihood so the
    masked comparison denominator keeps its gradient signal.
    """
    if mode == "baseline":
        batch = BatchedEpisode(ep, m, concepts=False)
        return batch.proto_nll(), None
    if mode == "sct":
        batch = BatchedEpisode(ep, m, concepts=True, detach_kappa=True)
        upsilon = sct.task_concept_prob(ep, m, sct.mine_triplets(ep, m, cap=triplet_cap))
        loss = sct.sct_episode_nll(batch, upsilon)
    elif mode == "mct":
        batch = BatchedEpisode(ep, m, concepts=False)
        loss, upsilon_rows, _ = mct.mct_episode_outputs(batch, ep, m)
        if collect_aux is not None:
            by_label = collect_aux.setdefault("upsilon", {})
            for row, label in zip(upsilon_rows, batch.query_labels):
                by_label.setdefault(label, []).append(row)
    else:
        raise ConfigError([f"unknown training mode {mode!r}"])
    kappas = None
    if need_kappas:
        feats = np.concatenate([ep.support_features(), ep.query_features()])
        kappas = m.concept_weights(m.embed_batch(feats))
    return loss, kappas


def regression_heads_matrix(m, xs) -> Tensor:
    """Stack per-concept head predictions for a batch: (n, C)."""
    emb = m.embed_batch(np.asarray(xs, dtype=np.float64).reshape(-1, 1))
    heads = len(m.regress_heads)
    cols = [m.regress(emb, c) for c in range(heads)]
    return ad.transpose(ad.stack(cols))


def episode_loss_family(m, ep, mode):
    """Squared error of the selector-weighted prediction on the query set."""
    xs = np.asarray([float(q.x[0]) for q in ep.query])
    ys = np.asarray([float(q.label) for q in ep.query])
    heads = regression_heads_matrix(m, xs)  # (n, C)
    if mode == "sct":
        upsilon = sct.regression_task_concept_prob(ep, m)
        preds = ad.matmul(heads, upsilon)
    else:  # single-head baseline
        preds = ad.reshape(heads, (heads.data.shape[0],))
    loss = ad.tmean(ad.squared_error(preds, Tensor(ys)))
    kappas = None
    if m.config.has_concepts:
        emb = m.embed_batch(xs.reshape(-1, 1))
        kappas = m.concept_weights(emb)
    return loss, kappas, preds


def confusing_loss(m, xs, ys, selector="learned"):
    """Training loss for one confusing batch.

    ``learned``: selector-weighted per-concept squared errors — each point's
    error under every head, weighted by the instance concept probabilities
    (which may read the label during training). The optimal selector
    concentrates on the best-fitting head, so heads specialize instead of
    blending. ``uniform``: squared error of the plain head average, the
    degenerate variant with the disambiguation module removed.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    heads = regression_heads_matrix(m, xs)  # (n, C)
    if selector == "learned":
        weights = mct.point_concept_prob_batch(m, xs.reshape(-1, 1), ys)
        targets = Tensor(np.repeat(ys[:, None], heads.data.shape[1], axis=1))
        loss = ad.tmean(ad.tsum(ad.mul(weights, ad.squared_error(heads, targets)),
                                axis=1))
    elif selector == "uniform":
        preds = ad.tmean(heads, axis=1)
        loss = ad.tmean(ad.squared_error(preds, Tensor(ys)))
    else:
        raise ConfigError([f"unknown selector variant {selector!r}"])
    kappas = m.concept_weights(m.embed_batch(xs.reshape(-1, 1)))
    return loss, kappas


def confusing_prediction_mse(m, xs, ys):
    """MSE of the deployed prediction: the selector-weighted head mixture."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    heads = regression_heads_matrix(m, xs)
    weights = mct.point_concept_prob_batch(m, xs.reshape(-1, 1), ys)
    preds = ad.tsum(ad.mul(weights, heads), axis=1)
    return ad.tmean(ad.squared_error(preds, Tensor(ys)))


# -- few-shot initialization -----------------------------------------------


WARMUP_LR = 1e-2
SEED_REPLAY_WEIGHT = 1.0


def seed_supervision_loss(m: ModelParams, xs, ys, concepts):
    """Selector cross-entropy plus matched-head squared error on seed points."""
    xs = np.asarray(xs, dtype=np.float64)
    one_hot = np.zeros((len(xs), m.config.n_concepts))
    one_hot[np.arange(len(xs)), np.asarray(concepts, dtype=int)] = 1.0
    mask = Tensor(one_hot)
    probs = mct.point_concept_prob_batch(m, xs.reshape(-1, 1), ys)
    ce = ad.neg(ad.div(ad.tsum(ad.mul(mask, ad.log(probs))), float(len(xs))))
    heads = regression_heads_matrix(m, xs)
    targets = Tensor(np.repeat(np.asarray(ys, dtype=np.float64)[:, None],
                               heads.data.shape[1], axis=1))
    mse = ad.div(ad.tsum(ad.mul(mask, ad.squared_error(heads, targets))),
                 float(len(xs)))
    return ad.add(ce, mse)


def few_shot_warmup(m: ModelParams, seed_xs, seed_ys, seed_concepts,
                    steps=2000, lr=WARMUP_LR, declared=None):
    """Supervise the concept machinery on a small concept-labeled seed set.

    Cross-entropy aligns the instance selector with the labeled concepts and
    matched squared error pins each regression head to its concept's points,
    breaking the head symmetry before confusing training starts. Updates
    exactly the ``declared`` parameters (default: all of them).
    """
    if declared is None:
        declared = m.named_parameters()
    opt = Adam(declared, lr=lr)
    loss = None
    for _ in range(steps):
        for p in declared.values():
            p.zero_grad()
        loss = seed_supervision_loss(m, seed_xs, seed_ys, seed_concepts)
        loss.backward()
        opt.step()
    return float(loss.data) if loss is not None else 0.0


# -- validation ----------------------------------------------------------------


def validation_metric(m: ModelParams, units, experiment, mode, selector="learned"):
    """Deterministic frozen-set metric: accuracy (classification) or MSE."""
    frozen = m.frozen_copy()
    if experiment == "confusing-regression":
        errs = []
        for (xs, ys), _ in units:
            if selector == "learned":
                errs.append(float(confusing_prediction_mse(frozen, xs, ys).data))
            else:
                loss, _ = confusing_loss(frozen, xs, ys, selector="uniform")
                errs.append(float(loss.data))
        return float(np.mean(errs))
    if experiment == "family-regression":
        errs = []
        for ep, _ in units:
            loss, _, _ = episode_loss_family(frozen, ep, mode)
            errs.append(float(loss.data))
        return float(np.mean(errs))
    hits, total = 0, 0
    for ep, _ in units:
        if mode == "sct":
            batch = BatchedEpisode(ep, frozen, concepts=True)
            preds = sct.sct_episode_predictions(batch, sct.task_concept_prob(ep, frozen))
        elif mode == "mct":
            batch = BatchedEpisode(ep, frozen, concepts=False)
            _, _, preds = mct.mct_episode_outputs(batch, ep, frozen)
        else:
            batch = BatchedEpisode(ep, frozen, concepts=False)
            preds = batch.proto_predictions()
        for pred, q in zip(preds, ep.query):
            hits += int(pred == q.label)
            total += 1
    return hits / total


# -- the loop ------------------------------------------------------------------


def meta_train(cfg, m: ModelParams, source, checkpoint_fn=None) -> TrainReport:
    """Run ``cfg.episodes`` optimizer steps over tasks from ``source``.

    ``cfg`` needs: experiment, mode (lowercase), episodes, learning_rate,
    omega_form, omega_lambda, val_interval, val_episodes, selector variant,
    warmup settings, checkpoint_interval, config hash. The CLI builds this
    from an ExperimentConfig; tests may pass any namespace with the fields.
    """
    report = TrainReport(config_hash=getattr(cfg, "config_hash", ""))
    start = time.perf_counter()
    mode = cfg.mode
    selector_variant = getattr(cfg, "selector", "learned")

    seeds = None
    if (cfg.experiment == "confusing-regression" and mode == "mct"
            and selector_variant == "learned" and cfg.warmup_steps > 0):
        from .taskgen import confusing_seed_set
        seeds = confusing_seed_set(cfg.warmup_points, cfg.seed)
        few_shot_warmup(m, *seeds, steps=cfg.warmup_steps)

    opt = Adam(m.named_parameters(), lr=cfg.learning_rate)
    val_units = None

    group = max(int(getattr(cfg, "episodes_per_step", 1)), 1)
    if group > 1 and cfg.experiment not in \
            ("confusing-regression", "family-regression"):
        if mode == "sct":
            return _meta_train_grouped_sct(cfg, m, source, opt, report, group,
                                           checkpoint_fn, start)
        if mode == "mct":
            return _meta_train_grouped_mct(cfg, m, source, opt, report, group,
                                           checkpoint_fn, start)

    for i in range(cfg.episodes):
        unit, _meta = source.sample_train(i)
        m.zero_grad()
        aux = {} if (mode == "mct" and cfg.experiment not in
                     ("confusing-regression", "family-regression")) else None

        if cfg.experiment == "confusing-regression":
            xs, ys = unit
            loss, kappas = confusing_loss(m, xs, ys, selector=selector_variant)
            if seeds is not None:
                # the labeled seed set keeps anchoring head identity
                loss = ad.add(loss, ad.mul(Tensor(SEED_REPLAY_WEIGHT),
                                           seed_supervision_loss(m, *seeds)))
        elif cfg.experiment == "family-regression":
            loss, kappas, _ = episode_loss_family(m, unit, mode)
        else:
            loss, kappas = episode_loss_classification(
                m, unit, mode, collect_aux=aux,
                need_kappas=(cfg.omega_form != "none" and cfg.omega_lambda > 0),
                triplet_cap=getattr(cfg, "triplet_cap", sct.TRIPLET_CAP))

        if cfg.omega_form != "none" and cfg.omega_lambda > 0 and kappas is not None:
            loss = ad.add(loss, regularizer_omega(m, kappas, cfg.omega_form,
                                                  cfg.omega_lambda))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(source.episode_seed(0, i)
                                   if hasattr(source, "episode_seed") else i)
        loss.backward()
        opt.step()
        report.losses.append(value)

        if aux and "upsilon" in aux:
            mct.update_prototypes(m, unit, aux["upsilon"])

        if cfg.val_interval and (i + 1) % cfg.val_interval == 0:
            if val_units is None:
                val_units = [source.sample_val(j) for j in range(cfg.val_episodes)]
            metric = validation_metric(m, val_units, cfg.experiment, mode,
                                        selector_variant)
            report.val_points.append((i + 1, metric))
            report.final_val = metric

        if checkpoint_fn and cfg.checkpoint_interval and \
                (i + 1) % cfg.checkpoint_interval == 0:
            checkpoint_fn(i + 1, m)

    if report.final_val is None and cfg.val_interval:
        if val_units is None:
            val_units = [source.sample_val(j) for j in range(cfg.val_episodes)]
        report.final_val = validation_metric(m, val_units, cfg.experiment, mode,
                                             selector_variant)
        report.val_points.append((cfg.episodes, report.final_val))

    report.wall_time_s = time.perf_counter() - start
    return report


ROUTING_DISTILL_WEIGHT = 0.1


def _meta_train_grouped_sct(cfg, m, source, opt, report, group,
                            checkpoint_fn, start):
    """Balanced episode-routing variant of sct training.

    Per step, a group of episodes is scored under every concept space alone;
    a capacity-balanced hard assignment routes each episode to one space
    (blocking selector collapse onto a single concept) and the task selector
    is distilled toward the routing. Validation and deployment use the
    selector-weighted posterior unchanged.
    """
    val_units = None
    step_count = cfg.episodes // group
    for step in range(step_count):
        m.zero_grad()
        batches, upsilons, nll_rows = [], [], []
        cap = getattr(cfg, "triplet_cap", sct.TRIPLET_CAP)
        for g in range(group):
            ep, _ = source.sample_train(step * group + g)
            batch = BatchedEpisode(ep, m, concepts=True, detach_kappa=True)
            batches.append(batch)
            upsilons.append(sct.task_concept_prob(
                ep, m, sct.mine_triplets(ep, m, cap=cap)))
            nll_rows.append(sct.sct_per_concept_nlls(batch))
        routing = sct.balanced_assignment(
            [[t.item() for t in row] for row in nll_rows])
        fit_terms = [nll_rows[b][routing[b]] for b in range(group)]
        distill = [ad.neg(ad.log(ad.index(upsilons[b], int(routing[b]))))
                   for b in range(group)]
        loss = ad.add(ad.tmean(ad.stack(fit_terms)),
                      ad.mul(Tensor(ROUTING_DISTILL_WEIGHT),
                             ad.tmean(ad.stack(distill))))
        if cfg.omega_form != "none" and cfg.omega_lambda > 0:
            feats = np.concatenate([b.episode.support_features() for b in batches])
            kappas = m.concept_weights(m.embed_batch(feats))
            loss = ad.add(loss, regularizer_omega(m, kappas, cfg.omega_form,
                                                  cfg.omega_lambda))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(source.episode_seed(0, step * group)
                                   if hasattr(source, "episode_seed") else step)
        loss.backward()
        opt.step()
        report.losses.extend([value] * group)

        done = (step + 1) * group
        if cfg.val_interval and done % cfg.val_interval < group:
            if val_units is None:
                val_units = [source.sample_val(j) for j in range(cfg.val_episodes)]
            metric = validation_metric(m, val_units, cfg.experiment, "sct")
            report.val_points.append((done, metric))
            report.final_val = metric
        if checkpoint_fn and cfg.checkpoint_interval and \
                done % cfg.checkpoint_interval < group:
            checkpoint_fn(done, m)

    if report.final_val is None and cfg.val_interval:
        if val_units is None:
            val_units = [source.sample_val(j) for j in range(cfg.val_episodes)]
        report.final_val = validation_metric(m, val_units, cfg.experiment, "sct")
        report.val_points.append((cfg.episodes, report.final_val))
    report.wall_time_s = time.perf_counter() - start
    return report


def fresh_label_centers(m, source, count, start_index):
    """Per-label mean embeddings over extra training-stream episodes.

    Computed with the final embedding after training: a running mean kept
    across the run would blend coordinates from earlier feature spaces.
    """
    frozen = m.frozen_copy()
    sums, counts = {}, {}
    for t in range(count):
        ep, _ = source.sample_train(start_index + t)
        emb = frozen.embed_batch(ep.support_features()).data
        for i, inst in enumerate(ep.support):
            sums[inst.label] = sums.get(inst.label, 0.0) + emb[i]
            counts[inst.label] = counts.get(inst.label, 0) + 1
    return {lab: sums[lab] / counts[lab] for lab in sums}


MCT_BURN_IN_SHARE = 0.3
PROTOTYPE_EPISODES = 150


def _meta_train_grouped_mct(cfg, m, source, opt, report, group,
                            checkpoint_fn, start):
    """Label-routing variant of mct training; see
    ``mct.mct_label_routed_losses`` for the loss composition."""
    val_units = None
    steps = cfg.episodes // group
    router = mct.LabelRouter(m.config.n_concepts,
                             burn_in=max(1, int(MCT_BURN_IN_SHARE * steps)))
    label_centers = {}
    routes = {}
    center_decay = mct.PROTOTYPE_DECAY
    for step in range(steps):
        m.zero_grad()
        episodes, batches = [], []
        for g in range(group):
            ep, _ = source.sample_train(step * group + g)
            episodes.append(ep)
            batches.append(BatchedEpisode(ep, m, concepts=False))
        loss, routes, _upsilon_rows = mct.mct_label_routed_losses(
            batches, episodes, m, router)
        if cfg.omega_form != "none" and cfg.omega_lambda > 0:
            feats = np.concatenate([b.episode.support_features() for b in batches])
            kappas = m.concept_weights(m.embed_batch(feats))
            loss = ad.add(loss, regularizer_omega(m, kappas, cfg.omega_form,
                                                  cfg.omega_lambda))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(source.episode_seed(0, step * group)
                                   if hasattr(source, "episode_seed") else step)
        loss.backward()
        opt.step()
        report.losses.extend([value] * group)

        for batch in batches:
            emb = batch.emb_s.data
            for lab in batch.classes:
                members = [i for i, l in enumerate(batch.labels) if l == lab]
                center = emb[members].mean(axis=0)
                if lab not in label_centers:
                    label_centers[lab] = center
                else:
                    label_centers[lab] = (center_decay * label_centers[lab]
                                          + (1 - center_decay) * center)
        mct.materialize_prototypes(m, label_centers, routes)

        done = (step + 1) * group
        if cfg.val_interval and done % cfg.val_interval < group:
            if val_units is None:
                val_units = [source.sample_val(j) for j in range(cfg.val_episodes)]
            metric = validation_metric(m, val_units, cfg.experiment, "mct")
            report.val_points.append((done, metric))
            report.final_val = metric
        if checkpoint_fn and cfg.checkpoint_interval and \
                done % cfg.checkpoint_interval < group:
            checkpoint_fn(done, m)

    if routes:
        centers = fresh_label_centers(m, source, PROTOTYPE_EPISODES, cfg.episodes)
        mct.materialize_prototypes(m, centers, routes)
    if report.final_val is None and cfg.val_interval:
        if val_units is None:
            val_units = [source.sample_val(j) for j in range(cfg.val_episodes)]
        report.final_val = validation_metric(m, val_units, cfg.experiment, "mct")
        report.val_points.append((cfg.episodes, report.final_val))
    report.wall_time_s = time.perf_counter() - start
    return report
