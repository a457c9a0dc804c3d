"""Evaluation protocols: trial-averaged metrics, concept-correspondence
matching, and delimited-text exports.

Learned concept heads carry no canonical order, so per-concept scores are
reported after searching the head-to-concept permutation that maximizes the
total (exhaustively, which caps the supported concept count at six).
Confidence intervals use the normal approximation, mean +/- 1.96 * SE.
Evaluation works on frozen value copies and never mutates the model.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from . import mct, sct
from .exceptions import ConfigError, UnsupportedSizeError
from .model import ModelParams
from .posterior import BatchedEpisode
from .taskgen import CONFUSING_CURVES
from .trainer import episode_loss_family

MAX_EXHAUSTIVE_CONCEPTS = 6


def _ci95(values):
    values = np.asarray(values, dtype=np.float64)
    se = values.std(ddof=1) / np.sqrt(len(values))
    return float(values.mean()), float(1.96 * se)


def mse_over_trials(m: ModelParams, source, trials, k_shot=None):
    """Mean query MSE and 95% CI over freshly sampled regression tasks.

    Each trial conditions on the task's support set through the task
    selector and scores the selector-weighted prediction on the queries.
    """
    if trials < 2:
        raise ConfigError(["mse_over_trials needs at least 2 trials"])
    if k_shot is not None and k_shot != source.k_shot:
        raise ConfigError([f"k_shot {k_shot} does not match the source's {source.k_shot}"])
    frozen = m.frozen_copy()
    mode = "sct" if frozen.config.has_concepts else "baseline"
    errors = []
    for t in range(trials):
        ep, _ = source.sample_test(t)
        loss, _, _ = episode_loss_family(frozen, ep, mode)
        errors.append(float(loss.data))
    mean, half = _ci95(errors)
    return mean, half


def accuracy_over_trials(m: ModelParams, source, trials, mode, split=None):
    """Mean episodic query accuracy and 95% CI over held-out episodes."""
    if trials < 2:
        raise ConfigError(["accuracy_over_trials needs at least 2 trials"])
    frozen = m.frozen_copy()
    accs = []
    for t in range(trials):
        ep, _ = (source.sample_test(t) if split is None
                 else source.sample_test(t, split=split))
        if mode == "sct":
            batch = BatchedEpisode(ep, frozen, concepts=True)
            preds = sct.sct_episode_predictions(batch, sct.task_concept_prob(ep, frozen))
        else:
            batch = BatchedEpisode(ep, frozen, concepts=False)
            preds = batch.proto_predictions()
        hits = sum(int(p == q.label) for p, q in zip(preds, ep.query))
        accs.append(hits / len(ep.query))
    mean, half = _ci95(accs)
    return mean, half


def concept_id_rate(m: ModelParams, source, episodes):
    """How often argmax of the task selector hits the episode's true concept.

    Learned concept indices are arbitrary, so the rate is taken under the
    best concept-to-attribute bijection over the evaluated episodes.
    """
    frozen = m.frozen_copy()
    c = frozen.config.n_concepts
    if c > MAX_EXHAUSTIVE_CONCEPTS:
        raise UnsupportedSizeError(
            f"exhaustive correspondence search supports at most "
            f"{MAX_EXHAUSTIVE_CONCEPTS} concepts, got {c}")
    picks, truths = [], []
    for t in range(episodes):
        ep, meta = source.sample_test(t)
        picks.append(int(np.argmax(sct.task_concept_prob(ep, frozen).data)))
        truths.append(meta.concept_id)
    picks = np.asarray(picks)
    truths = np.asarray(truths)
    best = 0.0
    for perm in permutations(range(c)):
        mapped = np.asarray([perm[p] for p in picks])
        best = max(best, float(np.mean(mapped == truths)))
    return best


def per_concept_accuracy(m: ModelParams, features, concept_labels):
    """Accuracy of each learned head against each true concept, matched.

    ``concept_labels[:, t]`` holds the ground-truth label of instance i under
    concept t. Builds the head-by-concept accuracy matrix via deployment
    prediction, searches the permutation maximizing total accuracy
    (exhaustive over C!), and returns the matched per-concept accuracies.
    """
    c = m.config.n_concepts
    if c > MAX_EXHAUSTIVE_CONCEPTS:
        raise UnsupportedSizeError(
            f"exhaustive correspondence search supports at most "
            f"{MAX_EXHAUSTIVE_CONCEPTS} concepts, got {c}")
    concept_labels = np.asarray(concept_labels)
    if concept_labels.shape[1] != c:
        raise ConfigError([f"test set provides {concept_labels.shape[1]} concept "
                           f"label columns for a {c}-concept model"])
    frozen = m.frozen_copy()
    matrix = np.zeros((c, c))
    preds = [mct.deploy_predict_batch(features, frozen, head) for head in range(c)]
    for head in range(c):
        for truth in range(c):
            matrix[head, truth] = float(np.mean(preds[head] == concept_labels[:, truth]))
    best_perm, best_total = None, -1.0
    for perm in permutations(range(c)):  # perm[truth] = head assigned to it
        total = sum(matrix[perm[t], t] for t in range(c))
        if total > best_total:
            best_total, best_perm = total, perm
    matched = [float(matrix[best_perm[t], t]) for t in range(c)]
    return {"matrix": matrix, "assignment": best_perm, "accuracies": matched}


def regression_concept_mse(m: ModelParams, grid=None, curves=CONFUSING_CURVES):
    """Per-concept MSE of each head against each true curve, matched.

    The regression analog of the accuracy matching: heads are assigned to
    latent curves by the permutation minimizing total MSE over the grid.
    """
    c = m.config.n_concepts
    if c > MAX_EXHAUSTIVE_CONCEPTS:
        raise UnsupportedSizeError(
            f"exhaustive correspondence search supports at most "
            f"{MAX_EXHAUSTIVE_CONCEPTS} concepts, got {c}")
    if grid is None:
        grid = np.linspace(-5.0, 5.0, 201)
    grid = np.asarray(grid, dtype=np.float64)
    frozen = m.frozen_copy()
    preds = head_predictions(frozen, grid)          # (n, C)
    truth = np.stack([f(grid) for f in curves], axis=1)
    n_true = truth.shape[1]
    mse = np.zeros((c, n_true))
    for head in range(c):
        for t in range(n_true):
            mse[head, t] = float(np.mean((preds[:, head] - truth[:, t]) ** 2))
    best_perm, best_total = None, np.inf
    for perm in permutations(range(c), n_true):
        total = sum(mse[perm[t], t] for t in range(n_true))
        if total < best_total:
            best_total, best_perm = total, perm
    matched = [float(mse[best_perm[t], t]) for t in range(n_true)]
    return {"matrix": mse, "assignment": best_perm, "mses": matched}


def head_predictions(m: ModelParams, grid):
    """Per-concept regression head values over a 1-D grid; (n, heads) array."""
    from .trainer import regression_heads_matrix
    return regression_heads_matrix(m.frozen_copy(), np.asarray(grid)).data


def export_curves(m: ModelParams, grid, path, config_hash="", curves=CONFUSING_CURVES):
    """Delimited table: x, one prediction column per head, true curve columns."""
    grid = np.asarray(grid, dtype=np.float64)
    preds = head_predictions(m, grid)
    truth = np.stack([f(grid) for f in curves], axis=1)
    heads = preds.shape[1]
    header = ",".join(["x"] + [f"pred_c{c}" for c in range(heads)]
                      + [f"true_y{t + 1}" for t in range(truth.shape[1])])
    lines = [f"# config_hash={config_hash}", header]
    for i, x in enumerate(grid):
        cells = ([repr(float(x))] + [repr(float(v)) for v in preds[i]]
                 + [repr(float(v)) for v in truth[i]])
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def export_embeddings(m: ModelParams, instances, concepts, path, config_hash=""):
    """Per instance: id, hidden concept, label, then every concept projection."""
    frozen = m.frozen_copy()
    dp = frozen.config.d_prime
    c = frozen.config.n_concepts
    feats = np.stack([np.asarray(inst.x, dtype=np.float64) for inst in instances])
    emb = frozen.embed_batch(feats).data
    proj = np.concatenate([emb @ frozen.concept_maps[k].data for k in range(c)], axis=1) \
        if frozen.config.has_concepts else emb
    header = ",".join(["id", "concept", "label"]
                      + [f"c{k}_e{j}" for k in range(proj.shape[1] // dp)
                         for j in range(dp)])
    lines = [f"# config_hash={config_hash}", header]
    for i, inst in enumerate(instances):
        concept = concepts[i] if concepts is not None else -1
        cells = [str(i), str(concept), str(inst.label)] + [repr(float(v)) for v in proj[i]]
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
