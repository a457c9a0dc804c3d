"""Deterministic, seedable generators for every synthetic experiment.

Three data families are produced here:

* confusing regression — one input maps to one of three fixed latent curves;
* random-family regression — each task draws a function family (sinusoid,
  linear, quadratic, cubic) and coefficients from fixed uniform ranges;
* colored glyphs — 16x16 procedural bitmaps in ten shapes and six colors,
  assembled into attribute-labeled episodes (one attribute per episode),
  mixed-label episodes (up to 16 candidate labels), or out-of-distribution
  episodes colorized under the DrawClass / DrawTask plans with disjoint
  meta-train / meta-test palettes.

All sampling is a pure function of (configuration, seed, index). Hidden
concept assignments are returned in ``EpisodeMeta`` objects, never inside
the episode itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import Episode, EpisodeMeta, Instance
from .exceptions import ConfigError

# -- confusing regression ---------------------------------------------------

CONFUSING_CURVES = (
    lambda x: -0.4 * x + 0.9 * np.sin(2.0 * x),
    lambda x: -3.0 * np.sin(2.0 * x + 1.7),
    lambda x: -0.1 * x + 0.9 * np.sin(2.0 * x + 2.5),
)

X_RANGE = (-5.0, 5.0)


@dataclass(frozen=True)
class CurveSpec:
    family: str
    coefficients: tuple
    concept_id: int

    def __call__(self, x):
        a = self.coefficients
        if self.family == "sinusoid":
            return a[0] * np.sin(a[1] * x) + a[2]
        if self.family == "linear":
            return a[0] * x + a[1]
        if self.family == "quadratic":
            return a[0] * x ** 2 + a[1] * x + a[2]
        if self.family == "cubic":
            return a[0] * x ** 3 + a[1] * x ** 2 + a[2] * x + a[3]
        if self.family == "fixed-mixture-component":
            return CONFUSING_CURVES[self.concept_id](x)
        raise ConfigError([f"unknown curve family {self.family!r}"])


def sample_confusing_batch(n, seed):
    """n draws of (x, y, hidden concept): x uniform, concept uniform over 3."""
    if n < 1:
        raise ConfigError(["confusing batch size must be >= 1"])
    rng = np.random.default_rng(seed)
    xs = rng.uniform(*X_RANGE, size=n)
    concepts = rng.integers(0, 3, size=n)
    ys = np.empty(n)
    for c in range(3):
        sel = concepts == c
        ys[sel] = CONFUSING_CURVES[c](xs[sel])
    return xs, ys, concepts


def confusing_seed_set(per_concept, seed):
    """Small concept-labeled set for the few-shot warm-up (privileged by design)."""
    rng = np.random.default_rng([int(seed), 0x5EED])
    xs, ys, cs = [], [], []
    for c in range(3):
        x = rng.uniform(*X_RANGE, size=per_concept)
        xs.append(x)
        ys.append(CONFUSING_CURVES[c](x))
        cs.append(np.full(per_concept, c))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(cs)


class ConfusingSource:
    """Streams (xs, ys) training batches; hidden concepts stay on the side."""

    def __init__(self, batch_size=128, seed=0):
        self.batch_size = batch_size
        self.seed = seed

    def episode_seed(self, stream, index):
        return int(self.seed) * 1_000_000 + stream * 100_000 + index

    def sample_train(self, index):
        xs, ys, cs = sample_confusing_batch(
            self.batch_size, [int(self.seed), 0, int(index)])
        meta = EpisodeMeta(query_concepts=list(cs))
        return (xs, ys), meta

    def sample_val(self, index):
        xs, ys, cs = sample_confusing_batch(
            self.batch_size, [int(self.seed), 1, int(index)])
        return (xs, ys), EpisodeMeta(query_concepts=list(cs))


# -- random-family regression ------------------------------------------------

FAMILY_RANGES = {
    "sinusoid": (("A", 0.1, 5.0), ("w", 0.8, 1.2), ("b", 0.0, 2.0 * np.pi)),
    "linear": (("A", -3.0, 3.0), ("b", -3.0, 3.0)),
    "quadratic": (("A", -0.2, 0.2), ("b", -2.0, 2.0), ("c", -3.0, 3.0)),
    "cubic": (("A", -0.1, 0.1), ("b", -0.2, 0.2), ("c", -2.0, 2.0), ("d", -3.0, 3.0)),
}
FAMILY_ORDER = ("sinusoid", "linear", "quadratic", "cubic")


def sample_curve_spec(rng) -> CurveSpec:
    concept = int(rng.integers(0, len(FAMILY_ORDER)))
    family = FAMILY_ORDER[concept]
    coeffs = tuple(rng.uniform(lo, hi) for _, lo, hi in FAMILY_RANGES[family])
    return CurveSpec(family=family, coefficients=coeffs, concept_id=concept)


def _distinct_uniform(rng, n):
    xs = rng.uniform(*X_RANGE, size=n)
    while len(np.unique(xs)) < n:  # ties have measure zero, but be exact
        xs = rng.uniform(*X_RANGE, size=n)
    return xs


def sample_family_task(k_shot, seed, query_size=100, spec=None):
    """One regression episode: K support points, disjoint query points."""
    rng = np.random.default_rng(seed)
    if spec is None:
        spec = sample_curve_spec(rng)
    xs = _distinct_uniform(rng, k_shot + query_size)
    ys = spec(xs)
    support = [Instance(x=np.asarray([xs[i]]), label=float(ys[i])) for i in range(k_shot)]
    query = [Instance(x=np.asarray([xs[i]]), label=float(ys[i]))
             for i in range(k_shot, k_shot + query_size)]
    ep = Episode(support=support, query=query, n_way=1, k_shot=k_shot,
                 task="regression", mode="sct",
                 seed=int(np.random.default_rng(seed).integers(0, 2 ** 31)))
    meta = EpisodeMeta(concept_id=spec.concept_id, info={"spec": spec})
    return ep, meta


class FamilySource:
    def __init__(self, k_shot, query_size=100, seed=0):
        self.k_shot = k_shot
        self.query_size = query_size
        self.seed = seed

    def sample_train(self, index):
        return sample_family_task(self.k_shot, [int(self.seed), 0, int(index)],
                                  self.query_size)

    def sample_val(self, index):
        return sample_family_task(self.k_shot, [int(self.seed), 1, int(index)],
                                  self.query_size)

    def sample_test(self, index):
        return sample_family_task(self.k_shot, [int(self.seed), 2, int(index)],
                                  self.query_size)


# -- colored glyphs -----------------------------------------------------------

GLYPH_SIZE = 16
N_SHAPES = 10
N_COLORS = 6
FEATURE_SHAPE = (GLYPH_SIZE, GLYPH_SIZE, 3)
FEATURE_DIM = GLYPH_SIZE * GLYPH_SIZE * 3

BASE_COLORS = np.array([
    [1.0, 0.15, 0.15],
    [0.15, 1.0, 0.15],
    [0.15, 0.15, 1.0],
    [1.0, 1.0, 0.15],
    [1.0, 0.15, 1.0],
    [0.15, 1.0, 1.0],
])


@dataclass(frozen=True)
class GlyphSpec:
    shape_id: int
    color_id: int
    color_rgb: tuple
    draw_plan: str = "none"
    noise_std: float = 0.0


def _glyph_masks():
    s = GLYPH_SIZE
    masks = np.zeros((N_SHAPES, s, s))
    masks[0, :, 6:10] = 1                      # vertical bar
    masks[1, 6:10, :] = 1                      # horizontal bar
    masks[2, :, 6:10] = 1                      # cross
    masks[2, 6:10, :] = 1
    yy, xx = np.mgrid[0:s, 0:s]
    r = np.hypot(yy - (s - 1) / 2, xx - (s - 1) / 2)
    masks[3][(r > 4) & (r < 7)] = 1            # ring
    masks[4, 4:12, 4:12] = 1                   # filled square
    masks[5][np.abs(yy - xx) <= 1] = 1         # diagonal
    masks[6][np.abs(yy + xx - (s - 1)) <= 1] = 1  # anti-diagonal
    masks[7] = np.maximum(masks[5], masks[6])  # X
    masks[8, :2, :] = masks[8, -2:, :] = 1     # frame
    masks[8, :, :2] = masks[8, :, -2:] = 1
    masks[9][(yy // 4 + xx // 4) % 2 == 0] = 1  # checker
    return masks

GLYPH_MASKS = _glyph_masks()


def render_glyph(shape_id, color_rgb, rng, pixel_noise=0.05, jitter=0,
                 mask_dropout=0.0):
    """Flattened 16x16x3 image: mask times color plus clipped pixel noise.

    ``jitter`` rolls the mask by a random offset in [-jitter, jitter] per
    axis and ``mask_dropout`` erases each mask pixel independently; both
    weaken pixel-exact shape overlap between same-class instances so shape
    identity takes real feature learning while hue stays easy.
    """
    mask = GLYPH_MASKS[shape_id]
    if jitter > 0:
        dy, dx = rng.integers(-jitter, jitter + 1, size=2)
        mask = np.roll(np.roll(mask, int(dy), axis=0), int(dx), axis=1)
    if mask_dropout > 0:
        mask = mask * (rng.random(mask.shape) >= mask_dropout)
    img = mask[:, :, None] * np.asarray(color_rgb)[None, None, :]
    if pixel_noise > 0:
        img = img + rng.normal(0.0, pixel_noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).reshape(-1)


def sample_mixed_instances(n, seed, pixel_noise=0.05):
    """Instance pool with mixed labeling: features, chosen label (0..15 with
    shapes first, colors at 10..15), and both ground-truth attribute labels."""
    rng = np.random.default_rng(seed)
    shapes = rng.integers(0, N_SHAPES, size=n)
    colors = rng.integers(0, N_COLORS, size=n)
    pick_color = rng.integers(0, 2, size=n).astype(bool)
    feats = np.stack([render_glyph(shapes[i], BASE_COLORS[colors[i]], rng, pixel_noise)
                      for i in range(n)])
    chosen = np.where(pick_color, N_SHAPES + colors, shapes)
    return feats, chosen, shapes, N_SHAPES + colors


class GlyphSource:
    """Episode factory for the glyph experiments.

    kind:
      * ``sct-attr`` — every episode labeled by one hidden attribute
        (0 = shape, 1 = color);
      * ``mct-mixed`` — each instance labeled by an independently chosen
        attribute, using the 16 global candidate labels;
      * ``ood`` — shape-labeled episodes colorized under ``plan``
        (DrawClass or DrawTask) with per-class candidate palettes; the
        meta-train palette lives in [0, 0.5], the meta-test one in [0.5, 1].
    """

    def __init__(self, kind, n_way=5, k_shot=1, query_per_class=3,
                 plan="none", color_noise_std=0.0, pixel_noise=0.05,
                 jitter=0, mask_dropout=0.0, seed=0):
        if kind not in ("sct-attr", "mct-mixed", "ood"):
            raise ConfigError([f"unknown glyph episode kind {kind!r}"])
        if kind == "ood" and plan not in ("DrawClass", "DrawTask"):
            raise ConfigError([f"ood episodes need plan DrawClass or DrawTask, got {plan!r}"])
        if kind != "ood" and plan not in ("none", None):
            raise ConfigError([f"plan {plan!r} only applies to ood episodes"])
        self.kind = kind
        self.n_way = n_way
        self.k_shot = k_shot
        self.query_per_class = query_per_class
        self.plan = plan
        self.color_noise_std = color_noise_std
        self.pixel_noise = pixel_noise
        self.jitter = jitter  # per-instance random shape translation, pixels
        self.mask_dropout = mask_dropout
        self.seed = seed
        if kind == "ood":
            palette_rng = np.random.default_rng([int(seed), 0xC0106])
            # 3 candidate colors per class, clustered around a class hue;
            # meta-train palettes live in [0, 0.5], meta-test in [0.5, 1]
            self.palettes = {}
            for split, lo, hi in (("base", 0.0, 0.5), ("novel", 0.5, 1.0)):
                centers = palette_rng.uniform(lo + 0.08, hi - 0.08, size=(N_SHAPES, 1, 3))
                spread = palette_rng.normal(0.0, 0.03, size=(N_SHAPES, 3, 3))
                self.palettes[split] = np.clip(centers + spread, lo, hi)
            # disjoint class split: meta-training never sees the test shapes
            perm = palette_rng.permutation(N_SHAPES)
            self.class_split = {"base": perm[:N_SHAPES // 2],
                                "novel": perm[N_SHAPES // 2:]}
            if self.n_way > N_SHAPES // 2:
                raise ConfigError([f"ood episodes support at most {N_SHAPES // 2}-way"])

    def episode_seed(self, stream, index):
        return int(self.seed) * 1_000_000 + stream * 100_000 + index

    def sample_train(self, index):
        return self._sample(0, index, split="base")

    def sample_val(self, index):
        return self._sample(1, index, split="base")

    def sample_test(self, index, split="novel"):
        return self._sample(2, index, split=split)

    def _sample(self, stream, index, split):
        rng = np.random.default_rng([int(self.seed), stream, int(index)])
        if self.kind == "sct-attr":
            return self._attr_episode(rng, stream, index)
        if self.kind == "mct-mixed":
            return self._mixed_episode(rng, stream, index)
        return self._ood_episode(rng, stream, index, split)

    def _make_episode(self, support, query, seed, mode):
        return Episode(support=support, query=query, n_way=self.n_way,
                       k_shot=self.k_shot, task="classification", mode=mode,
                       seed=seed, feature_shape=FEATURE_SHAPE)

    def _attr_episode(self, rng, stream, index):
        concept = int(rng.integers(0, 2))  # 0 labels by shape, 1 by color
        n_values = N_SHAPES if concept == 0 else N_COLORS
        if self.n_way > n_values:
            raise ConfigError([f"n_way {self.n_way} exceeds {n_values} values of the attribute"])
        values = rng.choice(n_values, size=self.n_way, replace=False)
        support, query = [], []
        for local, value in enumerate(values):
            for bucket, count in ((support, self.k_shot), (query, self.query_per_class)):
                for _ in range(count):
                    if concept == 0:
                        shape, color = int(value), int(rng.integers(0, N_COLORS))
                    else:
                        shape, color = int(rng.integers(0, N_SHAPES)), int(value)
                    feats = render_glyph(shape, BASE_COLORS[color], rng, self.pixel_noise)
                    bucket.append(Instance(x=feats, label=local))
        ep = self._make_episode(support, query, self.episode_seed(stream, index), "sct")
        return ep, EpisodeMeta(concept_id=concept, info={"values": values.tolist()})

    def _mixed_episode(self, rng, stream, index):
        labels = rng.choice(N_SHAPES + N_COLORS, size=self.n_way, replace=False)
        support, query = [], []
        s_concepts, q_concepts = [], []
        for label in labels:
            label = int(label)
            concept = 0 if label < N_SHAPES else 1
            for bucket, track, count in ((support, s_concepts, self.k_shot),
                                         (query, q_concepts, self.query_per_class)):
                for _ in range(count):
                    if concept == 0:
                        shape, color = label, int(rng.integers(0, N_COLORS))
                    else:
                        shape, color = int(rng.integers(0, N_SHAPES)), label - N_SHAPES
                    feats = render_glyph(shape, BASE_COLORS[color], rng, self.pixel_noise)
                    bucket.append(Instance(x=feats, label=label))
                    track.append(concept)
        ep = self._make_episode(support, query, self.episode_seed(stream, index), "mct")
        return ep, EpisodeMeta(support_concepts=s_concepts, query_concepts=q_concepts)

    def _ood_episode(self, rng, stream, index, split):
        palette = self.palettes[split]
        classes = rng.choice(self.class_split[split], size=self.n_way, replace=False)
        support, query = [], []
        task_color_idx = {int(c): int(rng.integers(0, 3)) for c in classes}
        for local, shape in enumerate(classes):
            shape = int(shape)
            for bucket, count in ((support, self.k_shot), (query, self.query_per_class)):
                for _ in range(count):
                    if self.plan == "DrawClass":
                        color = palette[shape][int(rng.integers(0, 3))]
                    else:  # DrawTask: one candidate per class for the whole episode
                        color = palette[shape][task_color_idx[shape]]
                    color = np.clip(color + rng.normal(0.0, self.color_noise_std, 3), 0, 1)
                    feats = render_glyph(shape, color, rng, self.pixel_noise,
                                         jitter=self.jitter,
                                         mask_dropout=self.mask_dropout)
                    bucket.append(Instance(x=feats, label=local))
        ep = self._make_episode(support, query, self.episode_seed(stream, index), "sct")
        return ep, EpisodeMeta(concept_id=0, info={"classes": classes.tolist(),
                                                   "split": split, "plan": self.plan})


def make_mct_testset(n, seed, pixel_noise=0.05):
    """Held-out mixed-label pool: features plus one label column per concept
    (column 0 = shape labels 0..9, column 1 = color labels 10..15)."""
    feats, _, shapes, colors = sample_mixed_instances(n, [int(seed), 0x7E57], pixel_noise)
    return feats, np.stack([shapes, colors], axis=1)


# -- episode export ------------------------------------------------------------

RECORD_HEADER = "episode_id,split,features,label,concept"


def write_episode_records(pairs, path, config_hash=""):
    """Line-delimited episode dump.

    One record per instance, comma-separated:
    ``episode_id,split,features,label,concept`` where ``split`` is
    ``support`` or ``query``, ``features`` joins values with ';', and
    ``concept`` is the hidden assignment (-1 when the generator defines none).
    """
    lines = [f"# config_hash={config_hash}", RECORD_HEADER]
    for eid, (ep, meta) in enumerate(pairs):
        for split, instances, concepts in (
                ("support", ep.support, meta.support_concepts),
                ("query", ep.query, meta.query_concepts)):
            for i, inst in enumerate(instances):
                if concepts:
                    concept = concepts[i]
                elif meta.concept_id is not None:
                    concept = meta.concept_id
                else:
                    concept = -1
                feats = ";".join(f"{v:.6g}" for v in np.asarray(inst.x).ravel())
                lines.append(f"{eid},{split},{feats},{inst.label},{concept}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
