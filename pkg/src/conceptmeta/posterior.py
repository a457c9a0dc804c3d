"""Classification posteriors: single-embedding and multi-concept forms.

``proto_posterior`` scores a query by its closeness to class representatives
in the shared embedding space (class mean embeddings when K > 1).
``multi_concept_posterior`` decomposes the comparison across concept spaces:
every (class, concept) pair contributes exp(-kappa_q * kappa_class * dist)
and a single denominator couples all classes and concepts, so the full table
of contributions sums to one by construction.

For K > 1 the multi-concept form compares against per-class mean embeddings
computed inside each concept space (project first, then average) with the
class-mean concept weights; at K = 1 this is exactly the per-instance form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .episodes import Episode, Instance
from .exceptions import EpisodeStructureError
from .model import ModelParams


@dataclass
class ConceptPosterior:
    """Class probabilities plus the per-(class, concept) breakdown.

    ``probs[i]`` is the probability of ``classes[i]``. ``per_concept`` (when
    present) holds the unnormalized-by-class contributions: entry (i, c) is
    the concept-c addend for class i, before any reweighting by a selector.
    ``likelihood`` (selector-weighted posteriors only) is the unnormalized
    mass of the queried class — the quantity whose negative log the trainer
    minimizes, which unlike ``probs`` keeps the shared comparison denominator
    (and with it the mask network) in the gradient path.
    """

    probs: Tensor
    classes: list
    per_concept: Tensor | None = None
    likelihood: Tensor | None = None


def _features(x):
    if isinstance(x, Instance):
        return np.asarray(x.x, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


class SupportContext:
    """Per-episode forward state shared across the episode's queries.

    Building the support embeddings once and reusing them keeps the graph
    small when a trainer evaluates every query of an episode in one loss.
    """

    def __init__(self, ep: Episode, m: ModelParams, concepts: bool = False):
        if ep.task != "classification":
            raise EpisodeStructureError("posteriors require a classification episode")
        self.episode = ep
        self.model = m
        self.classes = ep.classes
        self.labels = [inst.label for inst in ep.support]
        self.emb = m.embed_batch(ep.support_features())
        rows = {lab: [i for i, l in enumerate(self.labels) if l == lab]
                for lab in self.classes}

        # Shared-space class representatives (class means when K > 1).
        self.centers = []
        for lab in self.classes:
            members = [ad.row(self.emb, i) for i in rows[lab]]
            self.centers.append(members[0] if len(members) == 1
                                else ad.tmean(ad.stack(members), axis=0))

        self.concept_centers = None
        self.class_kappa = None
        if concepts:
            kappa = m.concept_weights(self.emb)  # (nk, C)
            self.class_kappa = []
            for lab in self.classes:
                krows = [ad.row(kappa, i) for i in rows[lab]]
                self.class_kappa.append(krows[0] if len(krows) == 1
                                        else ad.tmean(ad.stack(krows), axis=0))
            self.concept_centers = []
            for c in range(m.config.n_concepts):
                proj = m.concept_project(self.emb, c)  # (nk, d')
                per_class = []
                for lab in self.classes:
                    members = [ad.row(proj, i) for i in rows[lab]]
                    per_class.append(members[0] if len(members) == 1
                                     else ad.tmean(ad.stack(members), axis=0))
                self.concept_centers.append(per_class)


def proto_from_context(x, ctx: SupportContext) -> ConceptPosterior:
    m = ctx.model
    e_q = m.embed(_features(x))
    logits = [ad.neg(ad.neg_cosine_dist(e_q, center)) for center in ctx.centers]
    probs = ad.softmax(ad.stack(logits))
    return ConceptPosterior(probs=probs, classes=list(ctx.classes))


def proto_posterior(x, ep: Episode, m: ModelParams) -> ConceptPosterior:
    """Single-embedding posterior over the episode's classes."""
    return proto_from_context(x, SupportContext(ep, m, concepts=False))


def multi_concept_from_context(x, ctx: SupportContext) -> ConceptPosterior:
    m = ctx.model
    n_concepts = m.config.n_concepts
    e_q = m.embed(_features(x))
    kappa_q = m.concept_weights(e_q)
    proj_q = [m.concept_project(e_q, c) for c in range(n_concepts)]

    rows = []
    for yi, lab in enumerate(ctx.classes):
        terms = []
        for c in range(n_concepts):
            dist = ad.neg_cosine_dist(proj_q[c], ctx.concept_centers[c][yi])
            weight = ad.mul(ad.index(kappa_q, c), ad.index(ctx.class_kappa[yi], c))
            terms.append(ad.exp(ad.neg(ad.mul(weight, dist))))
        rows.append(ad.stack(terms))
    table = ad.stack(rows)                      # (N, C)
    per_concept = ad.div(table, ad.tsum(table))  # one denominator couples everything
    probs = ad.tsum(per_concept, axis=1)
    return ConceptPosterior(probs=probs, classes=list(ctx.classes), per_concept=per_concept)


def multi_concept_posterior(x, ep: Episode, m: ModelParams) -> ConceptPosterior:
    """Posterior integrating every concept space; see module docstring."""
    return multi_concept_from_context(x, SupportContext(ep, m, concepts=True))


# -- batched episode forward -------------------------------------------------


def class_membership(labels, classes):
    """Constant 0/1 matrix mapping support rows to class columns."""
    mat = np.zeros((len(labels), len(classes)))
    for i, lab in enumerate(labels):
        mat[i, classes.index(lab)] = 1.0
    return mat


class BatchedEpisode:
    """Whole-episode forward state: every query handled by matrix ops.

    Produces, per concept, the (query x class) table of multi-concept
    contributions exp(-kappa_q kappa_class dist) against per-class centers
    in that concept space, plus one-hot targets for NLL gathering. This is
    the fast path behind the per-query posterior functions; equivalence is
    covered by tests.
    """

    def __init__(self, ep: Episode, m: ModelParams, concepts: bool = True,
                 detach_kappa: bool = False):
        if ep.task != "classification":
            raise EpisodeStructureError("posteriors require a classification episode")
        self.episode = ep
        self.model = m
        self.classes = ep.classes
        self.labels = [inst.label for inst in ep.support]
        self.query_labels = [q.label for q in ep.query]
        member = class_membership(self.labels, self.classes)
        self.member = member
        avg = (member / member.sum(axis=0, keepdims=True)).T  # (N, nk)
        self.emb_s = m.embed_batch(ep.support_features())
        self.emb_q = m.embed_batch(ep.query_features())
        self.centers = ad.matmul(Tensor(avg), self.emb_s)  # (N, d)
        self.targets = class_membership(self.query_labels, self.classes)

        self.tables = None
        if concepts and m.config.has_concepts:
            kappa_s = m.concept_weights(self.emb_s)
            kappa_q = m.concept_weights(self.emb_q)
            if detach_kappa:
                # trainer-side option: the ranking loss saturates the concept
                # head if it may inflate kappa products; freezing them in the
                # loss keeps every concept table distance-driven
                kappa_s = Tensor(kappa_s.data.copy())
                kappa_q = Tensor(kappa_q.data.copy())
            self.kappa_q = kappa_q
            self.kappa_class = ad.matmul(Tensor(avg), kappa_s)  # (N, C)
            self.tables = []
            for c in range(m.config.n_concepts):
                proj_q = m.concept_project(self.emb_q, c)
                proj_centers = ad.matmul(Tensor(avg), m.concept_project(self.emb_s, c))
                dist = ad.neg_cosine_rows(proj_q, proj_centers)      # (nq, N)
                kq = ad.reshape(ad.row(ad.transpose(kappa_q), c), (len(ep.query), 1))
                kc = ad.reshape(ad.row(ad.transpose(self.kappa_class), c),
                                (1, len(self.classes)))
                weight = ad.matmul(kq, kc)                            # (nq, N)
                self.tables.append(ad.exp(ad.neg(ad.mul(weight, dist))))

    def proto_nll(self):
        """Mean query NLL of the single-embedding posterior."""
        logits = ad.neg(ad.neg_cosine_rows(self.emb_q, self.centers))
        probs = ad.softmax(logits)
        picked = ad.tsum(ad.mul(probs, Tensor(self.targets)), axis=1)
        return ad.neg(ad.tmean(ad.log(picked)))

    def proto_predictions(self):
        logits = -ad.neg_cosine_rows(self.emb_q, self.centers).data
        return [self.classes[i] for i in np.argmax(logits, axis=1)]
