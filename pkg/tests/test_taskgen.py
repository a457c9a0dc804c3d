"""Generators: fixed-curve values, sampling ranges, episode structure,
determinism, and the privilege firewall."""

import dataclasses
import math

import numpy as np
import pytest

from conceptmeta import taskgen
from conceptmeta.episodes import Episode, Instance
from conceptmeta.exceptions import ConfigError


def test_confusing_curves_fixed_values():
    assert taskgen.CONFUSING_CURVES[0](0.0) == 0.0
    assert abs(taskgen.CONFUSING_CURVES[1](0.0) - (-3.0 * math.sin(1.7))) < 1e-12
    assert abs(taskgen.CONFUSING_CURVES[2](0.0) - 0.9 * math.sin(2.5)) < 1e-12
    x = 1.3
    assert abs(taskgen.CONFUSING_CURVES[0](x) - (-0.4 * x + 0.9 * math.sin(2 * x))) < 1e-12


def test_confusing_batch_concept_frequencies():
    xs, ys, cs = taskgen.sample_confusing_batch(30_000, 123)
    for c in range(3):
        assert abs(np.mean(cs == c) - 1 / 3) < 0.02
    assert xs.min() >= -5.0 and xs.max() <= 5.0
    for c in range(3):
        sel = cs == c
        assert np.allclose(ys[sel], taskgen.CONFUSING_CURVES[c](xs[sel]))


def test_confusing_batch_deterministic():
    a = taskgen.sample_confusing_batch(100, 7)
    b = taskgen.sample_confusing_batch(100, 7)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_family_coefficient_ranges():
    rng = np.random.default_rng(0)
    amplitudes = []
    for _ in range(10_000):
        spec = taskgen.sample_curve_spec(rng)
        lo_hi = taskgen.FAMILY_RANGES[spec.family]
        for coeff, (_, lo, hi) in zip(spec.coefficients, lo_hi):
            assert lo <= coeff <= hi
        if spec.family == "sinusoid":
            amplitudes.append(spec.coefficients[0])
    assert amplitudes and min(amplitudes) >= 0.1 and max(amplitudes) <= 5.0


def test_family_curve_values():
    sin = taskgen.CurveSpec("sinusoid", (1.0, 1.0, 0.0), 0)
    assert abs(sin(np.pi / 2) - 1.0) < 1e-12
    lin = taskgen.CurveSpec("linear", (2.0, -1.0), 1)
    assert lin(3.0) == 5.0
    quad = taskgen.CurveSpec("quadratic", (0.1, 1.0, -2.0), 2)
    assert abs(quad(2.0) - (0.4 + 2.0 - 2.0)) < 1e-12
    cub = taskgen.CurveSpec("cubic", (0.05, 0.1, 1.0, -1.0), 3)
    assert abs(cub(2.0) - (0.4 + 0.4 + 2.0 - 1.0)) < 1e-12


def test_family_task_structure_and_disjointness():
    ep, meta = taskgen.sample_family_task(5, 42, query_size=100)
    assert len(ep.support) == 5 and len(ep.query) == 100
    sup_x = {float(inst.x[0]) for inst in ep.support}
    qry_x = {float(inst.x[0]) for inst in ep.query}
    assert not sup_x & qry_x
    spec = meta.info["spec"]
    for inst in ep.support:
        assert abs(float(inst.label) - spec(float(inst.x[0]))) < 1e-12


def test_family_source_deterministic():
    src = taskgen.FamilySource(k_shot=5, seed=3)
    a, _ = src.sample_train(4)
    b, _ = src.sample_train(4)
    assert np.array_equal(a.support_features(), b.support_features())
    assert np.array_equal(a.query_features(), b.query_features())
    c, _ = src.sample_train(5)
    assert not np.array_equal(a.support_features(), c.support_features())


def test_glyph_masks_distinct_and_binary():
    masks = taskgen.GLYPH_MASKS
    assert masks.shape == (10, 16, 16)
    assert set(np.unique(masks)) <= {0.0, 1.0}
    for i in range(10):
        assert masks[i].sum() >= 16
        for j in range(i + 1, 10):
            assert not np.array_equal(masks[i], masks[j])


def test_sct_attr_episode_structure():
    src = taskgen.GlyphSource("sct-attr", n_way=5, k_shot=2, query_per_class=3, seed=1)
    ep, meta = src.sample_train(0)
    assert ep.n_way == 5 and ep.k_shot == 2
    assert len(ep.support) == 10 and len(ep.query) == 15
    assert meta.concept_id in (0, 1)
    assert ep.feature_shape == (16, 16, 3)
    assert ep.classes == [0, 1, 2, 3, 4]


def test_mct_mixed_vocabulary_is_sixteen_labels():
    src = taskgen.GlyphSource("mct-mixed", n_way=4, k_shot=1, query_per_class=2, seed=2)
    seen = set()
    for i in range(300):
        ep, meta = src.sample_train(i)
        seen.update(inst.label for inst in ep.support)
        for inst, concept in zip(ep.support, meta.support_concepts):
            assert (inst.label < 10) == (concept == 0)
    assert seen == set(range(16))


def test_mixed_instance_pool_covers_both_concepts():
    feats, chosen, shapes, colors = taskgen.sample_mixed_instances(2000, 5)
    assert feats.shape == (2000, 768)
    assert set(np.unique(chosen)) <= set(range(16))
    assert (colors >= 10).all() and (shapes < 10).all()
    frac_color = np.mean(chosen >= 10)
    assert abs(frac_color - 0.5) < 0.05


def test_ood_drawtask_shares_class_color_within_episode():
    src = taskgen.GlyphSource("ood", n_way=3, k_shot=2, query_per_class=2,
                              plan="DrawTask", color_noise_std=0.0,
                              pixel_noise=0.0, seed=3)
    ep, meta = src.sample_train(0)
    for lab in ep.classes:
        members = [inst.x.reshape(16, 16, 3) for inst in ep.support + ep.query
                   if inst.label == lab]
        colors = []
        for img in members:
            mask = img.sum(axis=2) > 0
            colors.append(img[mask][0])
        for c in colors[1:]:
            assert np.allclose(c, colors[0], atol=1e-12)


def test_ood_drawclass_uniform_color_choice():
    src = taskgen.GlyphSource("ood", n_way=1, k_shot=1, query_per_class=0,
                              plan="DrawClass", color_noise_std=0.0,
                              pixel_noise=0.0, seed=4)
    target = int(src.class_split["base"][0])
    # count candidate-color picks for one fixed class over many episodes
    counts = {}
    picked = 0
    for i in range(6000):
        ep, meta = src.sample_train(i)
        if meta.info["classes"][0] != target:
            continue
        img = ep.support[0].x.reshape(16, 16, 3)
        color = img[img.sum(axis=2) > 0][0]
        key = int(np.argmin(np.abs(src.palettes["base"][target] - color).sum(axis=1)))
        counts[key] = counts.get(key, 0) + 1
        picked += 1
    freqs = np.array([counts.get(k, 0) for k in range(3)]) / picked
    assert picked > 300
    assert np.abs(freqs - 1 / 3).max() < 0.06


def test_ood_palettes_disjoint_ranges():
    src = taskgen.GlyphSource("ood", n_way=2, k_shot=1, query_per_class=1,
                              plan="DrawClass", seed=5)
    assert src.palettes["base"].min() >= 0.0 and src.palettes["base"].max() <= 0.5
    assert src.palettes["novel"].min() >= 0.5 and src.palettes["novel"].max() <= 1.0


def test_ood_invalid_plan_combinations():
    with pytest.raises(ConfigError):
        taskgen.GlyphSource("ood", plan="none")
    with pytest.raises(ConfigError):
        taskgen.GlyphSource("sct-attr", plan="DrawTask")


def test_glyph_source_deterministic():
    for kind, plan in (("sct-attr", "none"), ("mct-mixed", "none"), ("ood", "DrawClass")):
        src1 = taskgen.GlyphSource(kind, n_way=3, k_shot=1, query_per_class=2,
                                   plan=plan, seed=9)
        src2 = taskgen.GlyphSource(kind, n_way=3, k_shot=1, query_per_class=2,
                                   plan=plan, seed=9)
        a, _ = src1.sample_train(17)
        b, _ = src2.sample_train(17)
        assert np.array_equal(a.support_features(), b.support_features())
        assert [i.label for i in a.support] == [i.label for i in b.support]


def test_episode_carries_no_concept_metadata():
    src = taskgen.GlyphSource("sct-attr", n_way=3, k_shot=1, query_per_class=2, seed=6)
    ep, meta = src.sample_train(0)
    field_names = {f.name for f in dataclasses.fields(Episode)}
    assert "concept" not in " ".join(field_names)
    inst_fields = {f.name for f in dataclasses.fields(Instance)}
    assert inst_fields == {"x", "label"}
    assert meta.concept_id is not None  # metadata travels separately


def test_episode_record_export(tmp_path):
    src = taskgen.GlyphSource("sct-attr", n_way=2, k_shot=1, query_per_class=1, seed=7)
    pairs = [src.sample_train(i) for i in range(2)]
    path = taskgen.write_episode_records(pairs, tmp_path / "episodes.txt", "abc123")
    lines = open(path).read().splitlines()
    assert lines[0] == "# config_hash=abc123"
    assert lines[1] == taskgen.RECORD_HEADER
    assert len(lines) == 2 + 2 * (2 + 2)
    first = lines[2].split(",")
    assert first[0] == "0" and first[1] == "support"
    assert len(first[2].split(";")) == 768
