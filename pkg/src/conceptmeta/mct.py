"""Mixed-concepts-per-task machinery.

When instances inside one task may be labeled by different hidden concepts,
the concept must be inferred per instance: the selector pools FC-encoded
(support-instance, query, label) triples over the query's same-class support
instances. A learned sigmoid mask per (query, support) pair down-weights
denominator comparisons that cross concepts, so an impostor labeled under a
different criterion loses its push-away influence.

Labels enter these networks only during training; deployment prediction
reads nothing but features and the per-concept prototype table maintained
as exponential moving averages over training episodes.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .episodes import Episode, Instance
from .exceptions import EpisodeStructureError, ModeError
from .model import ModelParams
from .posterior import ConceptPosterior, SupportContext, _features
from .sct import neg_cos_matrix

PROTOTYPE_DECAY = 0.99


def _label_encoding(label, ep: Episode, m: ModelParams):
    """One-hot over the episode's label vocabulary; raw scalar for regression."""
    if m.config.task == "regression":
        return np.asarray([float(label)])
    classes = ep.classes
    if m.config.label_dim != len(classes):
        raise EpisodeStructureError(
            f"label_dim {m.config.label_dim} does not match episode way count {len(classes)}")
    enc = np.zeros(m.config.label_dim)
    enc[classes.index(label)] = 1.0
    return enc


def instance_concept_prob(x, y, ep: Episode, m: ModelParams,
                          ctx: SupportContext | None = None,
                          e_q: Tensor | None = None) -> Tensor:
    """Instance-specific concept probabilities from same-class support pairs."""
    if ctx is None:
        ctx = SupportContext(ep, m, concepts=False)
    if y not in ctx.classes:
        raise EpisodeStructureError(f"label {y!r} absent from the support set")
    if e_q is None:
        e_q = m.embed(_features(x))
    y_enc = Tensor(_label_encoding(y, ep, m))
    same = [i for i, lab in enumerate(ctx.labels) if lab == y]
    rows = [ad.concat([ad.row(ctx.emb, i), e_q, y_enc]) for i in same]
    (w1, b1), (w2, b2) = m.selector
    hidden = ad.relu(ad.add(ad.matmul(ad.stack(rows), w1), b1))
    pooled = ad.tsum(hidden, axis=0)
    return ad.softmax(ad.add(ad.matmul(pooled, w2), b2))


def point_concept_prob(m: ModelParams, x, y) -> Tensor:
    """Regression variant: the (x, y) point is its own same-class evidence."""
    if m.config.task != "regression":
        raise ModeError("point_concept_prob is the regression-mode selector")
    e = m.embed(np.asarray(x, dtype=np.float64))
    z = ad.concat([e, e, Tensor(np.asarray([float(y)]))])
    (w1, b1), (w2, b2) = m.selector
    hidden = ad.relu(ad.add(ad.matmul(z, w1), b1))
    return ad.softmax(ad.add(ad.matmul(hidden, w2), b2))


def point_concept_prob_batch(m: ModelParams, xs, ys) -> Tensor:
    """Batched ``point_concept_prob``; rows of the result live on the simplex."""
    e = m.embed_batch(np.asarray(xs, dtype=np.float64))
    ycol = Tensor(np.asarray(ys, dtype=np.float64).reshape(-1, 1))
    z = ad.concat([e, e, ycol])
    (w1, b1), (w2, b2) = m.selector
    hidden = ad.relu(ad.add(ad.matmul(z, w1), b1))
    return ad.softmax(ad.add(ad.matmul(hidden, w2), b2))


def comparison_mask(x, y, x_j, y_j, ep: Episode, m: ModelParams) -> Tensor:
    """Soft gate in (0, 1) for comparing (x, y) against (x_j, y_j)."""
    if m.mask_net is None:
        raise ModeError("comparison_mask needs an mct classification model")
    e_q = m.embed(_features(x))
    e_j = m.embed(_features(x_j))
    z = ad.concat([e_q, e_j,
                   Tensor(_label_encoding(y, ep, m)),
                   Tensor(_label_encoding(y_j, ep, m))])
    w, b = m.mask_net
    return ad.sigmoid(ad.index(ad.add(ad.matmul(z, w), b), 0))


def _pair_masks(ctx: SupportContext, e_q: Tensor, y, ep: Episode, m: ModelParams) -> Tensor:
    """Mask values for the query against every support instance, batched."""
    n = len(ctx.labels)
    y_enc = _label_encoding(y, ep, m)
    enc_rows = np.stack([np.concatenate([y_enc, _label_encoding(lab, ep, m)])
                         for lab in ctx.labels])
    q_rows = ad.stack([e_q] * n)
    z = ad.concat([q_rows, ctx.emb, Tensor(enc_rows)])
    w, b = m.mask_net
    return ad.sigmoid(ad.reshape(ad.add(ad.matmul(z, w), b), (n,)))


def mct_from_context(x, y, ctx: SupportContext, ep: Episode, m: ModelParams,
                     collect_aux: dict | None = None) -> ConceptPosterior:
    """Masked, selector-weighted posterior for one labeled query.

    The mask scales the denominator exponents only (a fully masked
    comparison contributes the constant exp(0) = 1); numerator addends stay
    unmasked. The per-class sums are renormalized before use as a likelihood.
    """
    n_concepts = m.config.n_concepts
    e_q = m.embed(_features(x))
    kappa_q = m.concept_weights(e_q)
    kappa_s = m.concept_weights(ctx.emb)  # (nk, C)
    proj_q = [m.concept_project(e_q, c) for c in range(n_concepts)]
    proj_s = [m.concept_project(ctx.emb, c) for c in range(n_concepts)]

    upsilon = instance_concept_prob(x, y, ep, m, ctx=ctx, e_q=e_q)
    tau = _pair_masks(ctx, e_q, y, ep, m)

    exponents = {}
    den_terms = []
    for j in range(len(ctx.labels)):
        for c in range(n_concepts):
            dist = ad.neg_cosine_dist(proj_q[c], ad.row(proj_s[c], j))
            weight = ad.mul(ad.index(kappa_q, c), ad.index(ad.row(kappa_s, j), c))
            wd = ad.mul(weight, dist)
            exponents[(j, c)] = wd
            den_terms.append(ad.exp(ad.neg(ad.mul(ad.index(tau, j), wd))))
    denom = ad.tsum(ad.stack(den_terms))

    rows = []
    for lab in ctx.classes:
        same = [j for j, l in enumerate(ctx.labels) if l == lab]
        cols = []
        for c in range(n_concepts):
            addends = [ad.div(ad.exp(ad.neg(exponents[(j, c)])), denom) for j in same]
            cols.append(addends[0] if len(addends) == 1 else ad.tsum(ad.stack(addends)))
        rows.append(ad.stack(cols))
    per_concept = ad.stack(rows)  # (N, C)

    raw = ad.matmul(per_concept, upsilon)
    probs = ad.div(raw, ad.tsum(raw))
    likelihood = ad.index(raw, ctx.classes.index(y))

    if collect_aux is not None:
        collect_aux.setdefault("upsilon", {}).setdefault(y, []).append(upsilon.data.copy())
    return ConceptPosterior(probs=probs, classes=list(ctx.classes),
                            per_concept=per_concept, likelihood=likelihood)


def mct_posterior(x, y, ep: Episode, m: ModelParams) -> ConceptPosterior:
    ctx = SupportContext(ep, m, concepts=False)
    return mct_from_context(x, y, ctx, ep, m)


def _label_matrix(labels, ep: Episode, m: ModelParams):
    return np.stack([_label_encoding(lab, ep, m) for lab in labels])


def episode_upsilon(batch, ep: Episode, m: ModelParams) -> Tensor:
    """Instance selector rows for every query of an episode: (nq, C).

    Pools FC-encoded (support, query, label) triples over each query's
    same-class support rows via constant gather/pool matrices.
    """
    nk, nq = len(batch.labels), len(batch.query_labels)
    pair_s, pair_q = [], []
    for q, y in enumerate(batch.query_labels):
        for i, lab in enumerate(batch.labels):
            if lab == y:
                pair_s.append(i)
                pair_q.append(q)
    gs = np.zeros((len(pair_s), nk))
    gs[np.arange(len(pair_s)), pair_s] = 1.0
    gq = np.zeros((len(pair_q), nq))
    gq[np.arange(len(pair_q)), pair_q] = 1.0
    enc = _label_matrix([batch.query_labels[q] for q in pair_q], ep, m)
    z = ad.concat([ad.matmul(Tensor(gs), batch.emb_s),
                   ad.matmul(Tensor(gq), batch.emb_q), Tensor(enc)])
    (w1, b1), (w2, b2) = m.selector
    hidden = ad.relu(ad.add(ad.matmul(z, w1), b1))
    pool = np.zeros((nq, len(pair_q)))
    pool[pair_q, np.arange(len(pair_q))] = 1.0
    logits = ad.add(ad.matmul(ad.matmul(Tensor(pool), hidden), w2), b2)
    return ad.softmax(logits)


def episode_tau(batch, ep: Episode, m: ModelParams) -> Tensor:
    """Comparison masks for every (query, support) pair: (nq, nk)."""
    nk, nq = len(batch.labels), len(batch.query_labels)
    rep_q = np.repeat(np.arange(nq), nk)
    rep_s = np.tile(np.arange(nk), nq)
    gq2 = np.zeros((nq * nk, nq))
    gq2[np.arange(nq * nk), rep_q] = 1.0
    gs2 = np.zeros((nq * nk, nk))
    gs2[np.arange(nq * nk), rep_s] = 1.0
    enc2 = np.concatenate([
        _label_matrix([batch.query_labels[q] for q in rep_q], ep, m),
        _label_matrix([batch.labels[j] for j in rep_s], ep, m)], axis=1)
    z2 = ad.concat([ad.matmul(Tensor(gq2), batch.emb_q),
                    ad.matmul(Tensor(gs2), batch.emb_s), Tensor(enc2)])
    wm, bm = m.mask_net
    return ad.sigmoid(ad.reshape(ad.add(ad.matmul(z2, wm), bm), (nq, nk)))


def pairwise_exponents(batch, m: ModelParams, detach_kappa=False):
    """Per concept, the (nq, nk) kappa-weighted distance exponents."""
    nk, nq = len(batch.labels), len(batch.query_labels)
    kappa_s = m.concept_weights(batch.emb_s)
    kappa_q = m.concept_weights(batch.emb_q)
    if detach_kappa:
        kappa_s = Tensor(kappa_s.data.copy())
        kappa_q = Tensor(kappa_q.data.copy())
    out = []
    for c in range(m.config.n_concepts):
        dist = ad.neg_cosine_rows(m.concept_project(batch.emb_q, c),
                                  m.concept_project(batch.emb_s, c))
        kq = ad.reshape(ad.row(ad.transpose(kappa_q), c), (nq, 1))
        ks = ad.reshape(ad.row(ad.transpose(kappa_s), c), (1, nk))
        out.append(ad.mul(ad.matmul(kq, ks), dist))
    return out


def mct_episode_outputs(batch, ep: Episode, m: ModelParams):
    """Loss, selector matrix and predictions for a whole episode (fast path).

    The loss is the mean negative log of the unnormalized selector-weighted
    likelihood (the shared masked denominator stays in the gradient path);
    predictions argmax the class-renormalized masses, which share the same
    ordering.
    """
    upsilon = episode_upsilon(batch, ep, m)
    tau = episode_tau(batch, ep, m)
    exponents = pairwise_exponents(batch, m)
    member = Tensor(batch.member)  # (nk, N)
    nq = len(batch.query_labels)
    raw, den = None, None
    for c, wd in enumerate(exponents):
        den_c = ad.tsum(ad.exp(ad.neg(ad.mul(tau, wd))), axis=1)  # (nq,)
        den = den_c if den is None else ad.add(den, den_c)
        mass_c = ad.matmul(ad.exp(ad.neg(wd)), member)  # (nq, N)
        ups_c = ad.reshape(ad.row(ad.transpose(upsilon), c), (nq, 1))
        term = ad.mul(ups_c, mass_c)
        raw = term if raw is None else ad.add(raw, term)

    picked = ad.tsum(ad.mul(raw, Tensor(batch.targets)), axis=1)  # (nq,)
    loss = ad.tmean(ad.sub(ad.log(den), ad.log(picked)))
    predictions = [batch.classes[i] for i in np.argmax(raw.data, axis=1)]
    return loss, upsilon.data.copy(), predictions


ROUTED_DISTILL_WEIGHT = 0.1



class LabelRouter:
    """Per-label concept routing from EMA-denoised per-concept losses.

    Every label consistently belongs to one hidden concept in a mixed
    stream, so routing decisions are made per label, not per instance: each
    label tracks an EMA of its mean episode NLL under every concept space
    and a capacity-balanced assignment over the label table reroutes at
    every step.

    Concept spaces are opened one at a time: during concept c's burn-in
    window all labels route to already-open spaces, so each fresh space
    starts neutral while the open ones specialize. At activation, the labels
    the specialized spaces explain worst migrate to the fresh space — the
    residual labels form the next concept. Without the burn-in, early noise
    splits crystallize and self-confirm.
    """

    def __init__(self, n_concepts, decay=0.98, slack=0.25, burn_in=400):
        self.n_concepts = n_concepts
        self.decay = decay
        self.slack = slack
        self.burn_in = burn_in
        self.step = 0
        self.margins = {}
        self._frozen = None
        self._frozen_active = 1

    def update(self, label_stats):
        self.step += 1
        for label, row in label_stats.items():
            prev = self.margins.get(label)
            self.margins[label] = (row if prev is None
                                   else self.decay * prev + (1 - self.decay) * row)

    def active_concepts(self):
        if self.burn_in <= 0:
            return self.n_concepts
        return min(self.step // self.burn_in + 1, self.n_concepts)

    def routes(self):
        from .sct import balanced_assignment
        if not self.margins:
            return {}
        labels = sorted(self.margins)
        active = self.active_concepts()
        if active == 1:
            return {l: 0 for l in labels}
        if self.burn_in > 0 and self.step < (self.n_concepts + 1) * self.burn_in:
            # commit window: at each activation, evict the labels the open
            # spaces explain worst into the fresh space, then hold the split
            # so it can prove itself before free rerouting begins
            if self._frozen is None or self._frozen_active != active:
                best_old = np.asarray([min(self.margins[l][:active - 1])
                                       for l in labels])
                keep = int(np.ceil(len(labels) * (1 + self.slack)
                                   * (active - 1) / active))
                order = np.argsort(best_old)
                frozen = {}
                kept = [labels[i] for i in order[:keep]]
                if active - 1 == 1:
                    for l in kept:
                        frozen[l] = 0
                else:
                    table = np.stack([self.margins[l][:active - 1] for l in kept])
                    for l, c in zip(kept, balanced_assignment(table, self.slack)):
                        frozen[l] = int(c)
                for i in order[keep:]:
                    frozen[labels[i]] = active - 1
                self._frozen = frozen
                self._frozen_active = active
            out = dict(self._frozen)
            for l in labels:  # labels first seen inside the window
                out.setdefault(l, 0)
            return out
        table = np.stack([self.margins[l] for l in labels])
        assignment = balanced_assignment(table, slack=self.slack)
        return dict(zip(labels, assignment))


def mct_label_routed_losses(batches, episodes, m: ModelParams, router: LabelRouter):
    """Label-routed training losses over a group of episodes.

    Every query is scored under each concept space alone (kappa frozen
    inside the loss so the head cannot saturate the tables); the router maps
    each label to a concept and instances inherit their label's route.

    Each per-concept score is a mask-gated NLL: the same-class mass stays
    unmasked while every other-class comparison enters as exp(-tau * wd), so
    a support instance labeled under a different criterion (which may be
    arbitrarily similar in this concept's space) can be discounted instead
    of forcing a contradictory push-apart gradient — without the gate, the
    routed space resolves the contradiction by collapsing. Because the gate
    scales the exponent, a fully closed comparison contributes the neutral
    exp(0) = 1 rather than vanishing: closing every gate cannot erase the
    discrimination pressure, so the gate is only worth closing on pairs the
    space genuinely cannot separate.

    The loss adds a selector distillation term toward the routing.
    Returns (loss tensor, routes used, upsilon rows per episode).
    """
    per_ep = []
    stats_sum, stats_count = {}, {}
    for batch, ep in zip(batches, episodes):
        upsilon = episode_upsilon(batch, ep, m)
        tau = episode_tau(batch, ep, m)
        exponents = pairwise_exponents(batch, m, detach_kappa=True)
        same_np = batch.targets @ batch.member.T        # (nq, nk) same-class flag
        same = Tensor(same_np)
        other = Tensor(1.0 - same_np)
        nlls = []
        plain_rows = []
        for wd in exponents:
            e = ad.exp(ad.neg(wd))
            picked = ad.tsum(ad.mul(e, same), axis=1)
            gated = ad.exp(ad.neg(ad.mul(tau, wd)))     # (nq, nk)
            rest = ad.tsum(ad.mul(gated, other), axis=1)
            nlls.append(ad.sub(ad.log(ad.add(picked, rest)), ad.log(picked)))
            # routing statistics stay mask-free: a space must explain a label
            # without gating impostors away, or the residual criterion would
            # never evict anything
            plain_rest = (e.data * (1.0 - same_np)).sum(axis=1)
            plain_rows.append(np.log(picked.data + plain_rest) - np.log(picked.data))
        per_ep.append((upsilon, nlls))
        rows = np.stack(plain_rows, axis=1)              # (nq, C)
        for qi, label in enumerate(batch.query_labels):
            stats_sum[label] = stats_sum.get(label, 0.0) + rows[qi]
            stats_count[label] = stats_count.get(label, 0) + 1
    router.update({l: stats_sum[l] / stats_count[l] for l in stats_sum})
    routes = router.routes()

    fit_terms, distill_terms = [], []
    upsilon_rows = []
    for (upsilon, nlls), batch in zip(per_ep, batches):
        nq = len(batch.query_labels)
        onehot = np.zeros((nq, m.config.n_concepts))
        for qi, label in enumerate(batch.query_labels):
            onehot[qi, routes[label]] = 1.0
        fit = None
        for c in range(m.config.n_concepts):
            fit_c = ad.mul(Tensor(onehot[:, c]), nlls[c])
            fit = fit_c if fit is None else ad.add(fit, fit_c)
        fit_terms.append(ad.tmean(fit))
        distill_terms.append(ad.neg(ad.tmean(
            ad.tsum(ad.mul(Tensor(onehot), ad.log(upsilon)), axis=1))))
        upsilon_rows.append(upsilon.data.copy())

    loss = ad.add(ad.tmean(ad.stack(fit_terms)),
                  ad.mul(Tensor(ROUTED_DISTILL_WEIGHT),
                         ad.tmean(ad.stack(distill_terms))))
    return loss, routes, upsilon_rows


def materialize_prototypes(m: ModelParams, label_centers, routes):
    """Project per-label embedding centers into their routed concept spaces.

    Each latent classifier owns the labels routed to its concept, so the
    deployment table holds one prototype per (routed concept, label).
    """
    m.prototypes = {}
    for label, center in label_centers.items():
        c = routes.get(label)
        if c is None:
            continue
        m.prototypes[(int(c), label)] = center @ m.concept_maps[c].data


def update_prototypes(m: ModelParams, ep: Episode, upsilon_by_label: dict,
                      decay: float = PROTOTYPE_DECAY):
    """Fold this episode's class centers into the per-concept prototype EMA.

    Each (concept, label) prototype tracks the class's support-center
    embedding in that concept space, weighted by the episode's mean selector
    probability for the concept, so labels accumulate mass where the model
    routed them.
    """
    emb = m.embed_batch(ep.support_features()).data
    labels = [inst.label for inst in ep.support]
    for lab in ep.classes:
        ups = upsilon_by_label.get(lab)
        if not ups:
            continue
        mean_ups = np.mean(np.stack(ups), axis=0)
        members = [i for i, l in enumerate(labels) if l == lab]
        center = emb[members].mean(axis=0)
        for c in range(m.config.n_concepts):
            vec = mean_ups[c] * (center @ m.concept_maps[c].data)
            key = (c, lab)
            if key not in m.prototypes:
                m.prototypes[key] = vec
            else:
                m.prototypes[key] = decay * m.prototypes[key] + (1.0 - decay) * vec


def deploy_predict(x, m: ModelParams, concept: int):
    """Label (nearest prototype) or scalar (regression head) for one concept.

    Never reads a label: the signature admits features only.
    """
    if not 0 <= concept < m.config.n_concepts:
        raise IndexError(
            f"concept index {concept} out of range [0, {m.config.n_concepts})")
    feats = _features(x)
    if m.config.task == "regression":
        return m.regress(m.embed(feats), concept).item()
    keys = [k for k in m.prototypes if k[0] == concept]
    if not keys:
        raise ModeError("deploy_predict: no prototypes accumulated for this concept")
    proj = (m.embed(feats).data @ m.concept_maps[concept].data)[None, :]
    protos = np.stack([m.prototypes[k] for k in keys])
    dists = neg_cos_matrix(proj, protos)[0]
    return keys[int(np.argmin(dists))][1]


def deploy_predict_batch(xs, m: ModelParams, concept: int):
    """Vectorized nearest-prototype prediction for a feature matrix."""
    if not 0 <= concept < m.config.n_concepts:
        raise IndexError(
            f"concept index {concept} out of range [0, {m.config.n_concepts})")
    keys = [k for k in m.prototypes if k[0] == concept]
    if not keys:
        raise ModeError("deploy_predict: no prototypes accumulated for this concept")
    proj = m.embed_batch(np.asarray(xs, dtype=np.float64)).data @ m.concept_maps[concept].data
    protos = np.stack([m.prototypes[k] for k in keys])
    dists = neg_cos_matrix(proj, protos)
    labels = np.asarray([k[1] for k in keys])
    return labels[np.argmin(dists, axis=1)]
