"""Single-concept-per-task machinery.

A task's hidden concept is inferred from comparison triplets mined out of
its support set: each (anchor, target-neighbor) same-class pair is matched
with a semi-hard impostor (farther than the target but minimally so, falling
back to the hardest impostor when none qualifies). The selector network
encodes each triplet with a shared FC+ReLU, sum-pools over triplets so the
output cannot depend on their order, and maps the pooled vector to concept
probabilities.

Regression tasks have no classes to mine triplets from; there the whole
support set, sorted by input so the encoding is order-free, forms a single
tuple fed through the same FC / sum / FC stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .episodes import Episode, Instance
from .exceptions import DegenerateInputError, EpisodeStructureError
from .model import ModelParams
from .posterior import ConceptPosterior, SupportContext, multi_concept_from_context

TRIPLET_CAP = 64


@dataclass(frozen=True)
class Triplet:
    anchor: Instance
    target_neighbor: Instance
    impostor: Instance


def neg_cos_matrix(a, b):
    """Pairwise negative cosine distances between row sets (plain arrays)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if (na == 0).any() or (nb == 0).any():
        raise DegenerateInputError("neg_cos_matrix: zero-norm row")
    return -(a @ b.T) / (na * nb.T)


def _augment(inst: Instance, ep: Episode, rng) -> Instance:
    """Create a distinct target neighbor for K=1 support instances.

    Image-like features (episode carries a feature shape) are shifted one
    pixel along the width; plain vectors get Gaussian noise scaled to 1% of
    the support feature spread.
    """
    x = np.asarray(inst.x, dtype=np.float64)
    if ep.feature_shape is not None:
        img = x.reshape(ep.feature_shape)
        return Instance(x=np.roll(img, 1, axis=1).reshape(-1), label=inst.label)
    spread = float(np.std(ep.support_features()))
    sigma = 0.01 * spread if spread > 0 else 0.01
    return Instance(x=x + rng.normal(0.0, sigma, size=x.shape), label=inst.label)


def mine_triplets(ep: Episode, m: ModelParams, cap: int = TRIPLET_CAP):
    """Semi-hard triplets from the support set, measured on the current embedding."""
    if ep.task != "classification" or ep.n_way < 2:
        raise EpisodeStructureError("triplet mining needs a classification episode with N >= 2")
    emb = m.embed_batch(ep.support_features()).data
    labels = [inst.label for inst in ep.support]
    dist = neg_cos_matrix(emb, emb)
    rng = np.random.default_rng([int(ep.seed), 0x731])

    pairs = []
    if ep.k_shot == 1:
        pairs = [(i, None) for i in range(len(labels))]
    else:
        for i in range(len(labels)):
            for j in range(len(labels)):
                if i != j and labels[i] == labels[j]:
                    pairs.append((i, j))
    if len(pairs) > cap:
        keep = rng.choice(len(pairs), size=cap, replace=False)
        pairs = [pairs[k] for k in sorted(keep)]

    triplets = []
    for i, j in pairs:
        anchor = ep.support[i]
        if j is None:
            target = _augment(anchor, ep, rng)
            target_emb = m.embed(target.x).data
            d_target = float(neg_cos_matrix(emb[i][None, :], target_emb[None, :])[0, 0])
        else:
            target = ep.support[j]
            d_target = dist[i, j]
        impostors = [l for l in range(len(labels)) if labels[l] != labels[i]]
        semi = [l for l in impostors if dist[i, l] > d_target]
        if semi:
            pick = min(semi, key=lambda l: dist[i, l])
        else:
            pick = max(impostors, key=lambda l: dist[i, l])
        triplets.append(Triplet(anchor=anchor, target_neighbor=target,
                                impostor=ep.support[pick]))
    return triplets


def task_concept_prob(ep: Episode, m: ModelParams, triplets=None) -> Tensor:
    """Concept probabilities for the whole task from its triplets."""
    if triplets is None:
        triplets = mine_triplets(ep, m)
    if not triplets:
        raise EpisodeStructureError("no triplets available for the concept selector")
    members = np.stack([inst.x for t in triplets
                        for inst in (t.anchor, t.target_neighbor, t.impostor)])
    emb = m.embed_batch(members)  # (3T, d)
    rows = []
    for t in range(len(triplets)):
        rows.append(ad.concat([ad.row(emb, 3 * t), ad.row(emb, 3 * t + 1),
                               ad.row(emb, 3 * t + 2)]))
    z = ad.stack(rows)  # (T, 3d)
    (w1, b1), (w2, b2) = m.selector
    hidden = ad.relu(ad.add(ad.matmul(z, w1), b1))
    pooled = ad.tsum(hidden, axis=0)
    return ad.softmax(ad.add(ad.matmul(pooled, w2), b2))


def regression_task_concept_prob(ep: Episode, m: ModelParams) -> Tensor:
    """Concept probabilities for a regression task from its support tuple."""
    if ep.task != "regression":
        raise EpisodeStructureError("regression selector called on a classification episode")
    order = np.argsort([float(inst.x[0]) for inst in ep.support])
    flat = np.concatenate([np.concatenate([ep.support[i].x, [float(ep.support[i].label)]])
                           for i in order])
    (w1, b1), (w2, b2) = m.selector
    if flat.shape[0] != w1.data.shape[0]:
        raise EpisodeStructureError(
            f"support tuple width {flat.shape[0]} does not match selector input "
            f"{w1.data.shape[0]} (support_size mismatch)")
    hidden = ad.relu(ad.add(ad.matmul(Tensor(flat), w1), b1))
    return ad.softmax(ad.add(ad.matmul(hidden, w2), b2))


def sct_from_context(x, ctx: SupportContext, upsilon: Tensor) -> ConceptPosterior:
    """Selector-weighted posterior, renormalized over classes.

    The selector reweights the per-concept contributions of the shared
    denominator, so the weighted sums over classes no longer total one;
    renormalizing restores a proper likelihood without moving the argmax.
    """
    base = multi_concept_from_context(x, ctx)
    raw = ad.matmul(base.per_concept, upsilon)  # (N,)
    probs = ad.div(raw, ad.tsum(raw))
    return ConceptPosterior(probs=probs, classes=base.classes,
                            per_concept=base.per_concept)


def sct_posterior(x, ep: Episode, m: ModelParams) -> ConceptPosterior:
    ctx = SupportContext(ep, m, concepts=True)
    upsilon = task_concept_prob(ep, m)
    return sct_from_context(x, ctx, upsilon)


def sct_episode_raw(batch, upsilon: Tensor) -> Tensor:
    """Selector-weighted class masses for every query at once: (nq, N)."""
    raw = None
    for c, table in enumerate(batch.tables):
        term = ad.mul(ad.index(upsilon, c), table)
        raw = term if raw is None else ad.add(raw, term)
    return raw


def sct_episode_nll(batch, upsilon: Tensor) -> Tensor:
    """Mean renormalized NLL over the episode's queries (fast path)."""
    raw = sct_episode_raw(batch, upsilon)
    picked = ad.tsum(ad.mul(raw, Tensor(batch.targets)), axis=1)
    total = ad.tsum(raw, axis=1)
    return ad.tmean(ad.sub(ad.log(total), ad.log(picked)))


def sct_episode_predictions(batch, upsilon: Tensor):
    raw = sct_episode_raw(batch, upsilon).data
    return [batch.classes[i] for i in np.argmax(raw, axis=1)]


def sct_per_concept_nlls(batch):
    """Episode NLL under each concept space alone: list of C scalar tensors."""
    out = []
    for table in batch.tables:
        picked = ad.tsum(ad.mul(table, Tensor(batch.targets)), axis=1)
        total = ad.tsum(table, axis=1)
        out.append(ad.tmean(ad.sub(ad.log(total), ad.log(picked))))
    return out


def balanced_assignment(nll_matrix, slack=0.3):
    """Assign episodes to concepts under a soft balance constraint.

    Episodes are processed in decreasing confidence (margin between their
    best and second-best concept), greedily taking the best concept with
    remaining capacity. Capacity is (1 + slack) times the even share, so a
    concept may take somewhat more than half of a group (the episode stream
    is only balanced in expectation) but can never swallow everything —
    which blocks the winner-take-all collapse of unconstrained routing.
    """
    nll = np.asarray(nll_matrix, dtype=np.float64)
    n_ep, n_concepts = nll.shape
    capacity = int(np.ceil(n_ep * (1.0 + slack) / n_concepts))
    remaining = {c: capacity for c in range(n_concepts)}
    order = np.argsort(np.partition(nll, 1, axis=1)[:, 0]
                       - np.partition(nll, 1, axis=1)[:, 1])
    assignment = np.zeros(n_ep, dtype=int)
    for b in order:
        ranked = np.argsort(nll[b])
        pick = next(c for c in ranked if remaining[c] > 0)
        remaining[pick] -= 1
        assignment[b] = pick
    return assignment
