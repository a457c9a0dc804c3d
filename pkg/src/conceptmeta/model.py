"""Learnable parameters and their forward passes.

One ``ModelParams`` object owns everything the optimizer touches: the shared
embedding MLP, the per-concept linear maps, the concept-probability head,
the selector and mask networks consumed by the sct/mct modules, and (in
regression mode) one affine head per concept. Which blocks exist follows
from the configuration, and ``count_parameters`` states the closed-form
total so tests can catch silently duplicated networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, DimensionError, ModeError

MODES = ("baseline", "sct", "mct")
TASKS = ("classification", "regression")


@dataclass(frozen=True)
class ModelConfig:
    """Static shape information for one model.

    ``phi_hidden`` lists the hidden widths of the embedding MLP; the output
    layer to ``embed_dim`` is implicit. ``phi_identity`` drops the MLP
    entirely (requires ``embed_dim == input_dim``). ``label_dim`` is the
    one-hot width used by the mct selector and mask nets (the episode way
    count for classification, 1 for regression). ``support_size`` sizes the
    regression-task selector input.
    """

    input_dim: int
    embed_dim: int
    n_concepts: int = 1
    concept_dim: int | None = None
    phi_hidden: tuple = ()
    phi_identity: bool = False
    head_hidden: int | None = None
    mode: str = "sct"
    task: str = "classification"
    label_dim: int = 0
    support_size: int = 0
    concept_map_noise: float = 0.05

    def __post_init__(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.task not in TASKS:
            problems.append(f"task must be one of {TASKS}, got {self.task!r}")
        if self.input_dim < 1 or self.embed_dim < 1 or self.n_concepts < 1:
            problems.append("input_dim, embed_dim and n_concepts must be positive")
        if self.phi_identity and self.embed_dim != self.input_dim:
            problems.append("identity embedding requires embed_dim == input_dim")
        if self.mode == "mct" and self.task == "classification" and self.label_dim < 1:
            problems.append("mct classification needs label_dim (the way count)")
        if self.mode == "sct" and self.task == "regression" and self.support_size < 1:
            problems.append("sct regression needs support_size to size the selector")
        if problems:
            raise ConfigError(problems)

    @property
    def d_prime(self):
        return self.concept_dim if self.concept_dim is not None else self.embed_dim

    @property
    def has_concepts(self):
        return self.mode in ("sct", "mct")

    @property
    def has_mask_net(self):
        return self.mode == "mct" and self.task == "classification"

    @property
    def head_width(self):
        return self.head_hidden if self.head_hidden is not None else max(self.embed_dim // 2, 1)

    @property
    def selector_in(self):
        """Per-element input width of the selector network for this config."""
        if self.mode == "sct":
            if self.task == "classification":
                return 3 * self.embed_dim
            return 2 * self.support_size
        if self.mode == "mct":
            enc = self.label_dim if self.task == "classification" else 1
            return 2 * self.embed_dim + enc
        return 0

    @property
    def mask_in(self):
        return 2 * self.embed_dim + 2 * self.label_dim


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form learnable parameter count implied by the configuration."""
    d, dp, c = cfg.embed_dim, cfg.d_prime, cfg.n_concepts

    def fc(i, o):
        return i * o + o

    total = 0
    if not cfg.phi_identity:
        widths = [cfg.input_dim, *cfg.phi_hidden, d]
        total += sum(fc(widths[i], widths[i + 1]) for i in range(len(widths) - 1))
    if cfg.has_concepts:
        total += c * d * dp
        total += fc(d, cfg.head_width) + fc(cfg.head_width, c)
        total += fc(cfg.selector_in, d) + fc(d, c)
    if cfg.has_mask_net:
        total += fc(cfg.mask_in, 1)
    if cfg.task == "regression":
        head_in = dp if cfg.has_concepts else d
        heads = c if cfg.has_concepts else 1
        total += heads * (head_in + 1)
    return total


def _fc_init(rng, fan_in, fan_out, scale=None):
    s = np.sqrt(1.0 / fan_in) if scale is None else scale
    w = ad.parameter(rng.normal(0.0, s, size=(fan_in, fan_out)))
    b = ad.parameter(np.zeros(fan_out))
    return w, b


class ModelParams:
    """All learnable tensors plus the deployment prototype state.

    Prototypes (per concept and label, maintained as exponential moving
    averages by the trainer) are plain arrays, not parameters: they receive
    no gradients and are excluded from ``parameter_count``.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng([int(seed), 0xA11CE])
        d, dp, c = config.embed_dim, config.d_prime, config.n_concepts

        self.phi = []
        if not config.phi_identity:
            widths = [config.input_dim, *config.phi_hidden, d]
            for i in range(len(widths) - 1):
                scale = np.sqrt(2.0 / widths[i]) if i < len(widths) - 2 else None
                w, b = _fc_init(rng, widths[i], widths[i + 1], scale)
                if i == len(widths) - 2:
                    # nonzero output bias: a fully dead hidden layer must not
                    # yield an exactly-zero embedding (cosine is undefined there)
                    b.data = np.full(widths[i + 1], 0.01)
                self.phi.append((w, b))

        self.concept_maps = []
        self.head = []
        self.selector = []
        self.mask_net = None
        self.regress_heads = []

        if config.has_concepts:
            for _ in range(c):
                m = np.eye(d, dp) + rng.normal(0.0, config.concept_map_noise, size=(d, dp))
                self.concept_maps.append(ad.parameter(m))
            # zero output layer: concept probabilities start exactly uniform,
            # so no concept table is born dead
            head_out = _fc_init(rng, config.head_width, c)
            head_out[0].data[:] = 0.0
            self.head = [_fc_init(rng, d, config.head_width), head_out]
            self.selector = [_fc_init(rng, config.selector_in, d),
                             _fc_init(rng, d, c)]
        if config.has_mask_net:
            self.mask_net = _fc_init(rng, config.mask_in, 1)
        if config.task == "regression":
            head_in = dp if config.has_concepts else d
            heads = c if config.has_concepts else 1
            for _ in range(heads):
                w = ad.parameter(rng.normal(0.0, np.sqrt(1.0 / head_in), size=head_in))
                b = ad.parameter(np.zeros(()))
                self.regress_heads.append((w, b))

        # (concept, label) -> running-mean embedding in that concept space
        self.prototypes = {}

    # -- parameter plumbing ----------------------------------------------

    def named_parameters(self):
        out = {}
        for i, (w, b) in enumerate(self.phi):
            out[f"phi.{i}.w"] = w
            out[f"phi.{i}.b"] = b
        for i, m in enumerate(self.concept_maps):
            out[f"concept_map.{i}"] = m
        for i, (w, b) in enumerate(self.head):
            out[f"head.{i}.w"] = w
            out[f"head.{i}.b"] = b
        for i, (w, b) in enumerate(self.selector):
            out[f"selector.{i}.w"] = w
            out[f"selector.{i}.b"] = b
        if self.mask_net is not None:
            out["mask.w"] = self.mask_net[0]
            out["mask.b"] = self.mask_net[1]
        for i, (w, b) in enumerate(self.regress_heads):
            out[f"regress.{i}.w"] = w
            out[f"regress.{i}.b"] = b
        return out

    def parameter_count(self):
        return sum(p.data.size for p in self.named_parameters().values())

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()

    def copy(self):
        """Value copy: independent tensors, shared nothing."""
        dup = ModelParams(self.config, seed=0)
        for name, p in dup.named_parameters().items():
            p.data = self.named_parameters()[name].data.copy()
        dup.prototypes = {k: v.copy() for k, v in self.prototypes.items()}
        return dup

    def frozen_copy(self):
        """Copy whose tensors do not require grad; forwards build no graph."""
        dup = self.copy()
        for p in dup.named_parameters().values():
            p.requires_grad = False
        return dup

    def state_arrays(self):
        """name -> array for every parameter plus prototype entries."""
        out = {name: p.data for name, p in self.named_parameters().items()}
        for (c, label), v in sorted(self.prototypes.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
            out[f"proto/{c}/{label}"] = v
        return out

    def load_state_arrays(self, arrays):
        params = self.named_parameters()
        protos = {k: v for k, v in arrays.items() if k.startswith("proto/")}
        plain = {k: v for k, v in arrays.items() if not k.startswith("proto/")}
        if set(plain) != set(params):
            missing = sorted(set(params) - set(plain))
            extra = sorted(set(plain) - set(params))
            raise DimensionError(
                f"parameter names disagree with configuration (missing {missing}, extra {extra})")
        for name, arr in plain.items():
            if params[name].data.shape != arr.shape:
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} does not match "
                    f"configured shape {params[name].data.shape}")
            params[name].data = np.asarray(arr, dtype=np.float64).copy()
        self.prototypes = {}
        for key, arr in protos.items():
            _, c, label = key.split("/", 2)
            self.prototypes[(int(c), int(label))] = np.asarray(arr, dtype=np.float64).copy()

    # -- forward computations ----------------------------------------------

    def embed_batch(self, xs) -> Tensor:
        """Embed a stack of feature vectors; (n, input_dim) -> (n, d)."""
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != self.config.input_dim:
            raise DimensionError(
                f"embed: expected (n, {self.config.input_dim}) features, got {xs.shape}")
        h = Tensor(xs)
        if self.config.phi_identity:
            return h
        last = len(self.phi) - 1
        for i, (w, b) in enumerate(self.phi):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.relu(h)
        return h

    def embed(self, x) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.config.input_dim:
            raise DimensionError(
                f"embed: expected a {self.config.input_dim}-vector, got shape {x.shape}")
        return ad.row(self.embed_batch(x[None, :]), 0)

    def concept_project(self, e, c) -> Tensor:
        """Project an embedding (or batch) into concept space ``c``."""
        if not self.concept_maps:
            raise ModeError("concept_project: baseline mode has no concept maps")
        if not 0 <= c < self.config.n_concepts:
            raise IndexError(
                f"concept index {c} out of range [0, {self.config.n_concepts})")
        return ad.matmul(e, self.concept_maps[c])

    def concept_weights(self, e) -> Tensor:
        """Concept probabilities for an embedding (or rows of a batch)."""
        if not self.head:
            raise ModeError("concept_weights: baseline mode has no concept head")
        (w1, b1), (w2, b2) = self.head
        h = ad.relu(ad.add(ad.matmul(e, w1), b1))
        return ad.softmax(ad.add(ad.matmul(h, w2), b2))

    def regress(self, e, c) -> Tensor:
        """Affine prediction from concept space ``c`` (scalar, or batch vector)."""
        if self.config.task != "regression":
            raise ModeError("regress called on a classification-mode model")
        if self.config.has_concepts:
            v = self.concept_project(e, c)
        else:
            if c != 0:
                raise IndexError(f"concept index {c} out of range [0, 1)")
            v = e
        w, b = self.regress_heads[c]
        return ad.add(ad.matmul(v, w), b)
