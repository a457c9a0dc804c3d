"""Episode data structures.

Instances and episodes carry only what the learner is allowed to see:
features and labels. Hidden ground-truth concept assignments travel in a
separate ``EpisodeMeta`` object that generators return alongside the
episode, so nothing handed to the trainer can leak evaluation metadata.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EpisodeStructureError


@dataclass(frozen=True)
class Instance:
    """One feature vector plus its (possibly concept-ambiguous) label."""

    x: np.ndarray
    label: object  # int class id or float regression target


@dataclass
class EpisodeMeta:
    """Evaluation-only metadata kept out of trainer-visible structures."""

    concept_id: int | None = None
    support_concepts: list = field(default_factory=list)
    query_concepts: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


@dataclass
class Episode:
    """Support/query pair with N-way/K-shot metadata.

    Classification episodes are validated on construction: exactly
    ``k_shot`` support instances per each of ``n_way`` labels, and query
    labels must appear in the support.
    """

    support: list
    query: list
    n_way: int
    k_shot: int
    task: str = "classification"
    mode: str | None = None
    seed: int = 0
    feature_shape: tuple | None = None

    def __post_init__(self):
        if self.task != "classification":
            return
        counts = Counter(inst.label for inst in self.support)
        if len(counts) != self.n_way:
            raise EpisodeStructureError(
                f"support has {len(counts)} distinct labels, expected n_way={self.n_way}")
        bad = {lab: n for lab, n in counts.items() if n != self.k_shot}
        if bad:
            raise EpisodeStructureError(
                f"support shot counts deviate from k_shot={self.k_shot}: {bad}")
        support_labels = set(counts)
        stray = {inst.label for inst in self.query} - support_labels
        if stray:
            raise EpisodeStructureError(
                f"query labels {sorted(stray)} missing from support")

    @property
    def classes(self):
        """Sorted distinct support labels; posterior vectors follow this order."""
        return sorted({inst.label for inst in self.support})

    def support_features(self):
        return np.stack([inst.x for inst in self.support])

    def query_features(self):
        return np.stack([inst.x for inst in self.query])
