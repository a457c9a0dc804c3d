"""Model forwards: hand-computed values, simplex membership, parameter
counting, and mode guards."""

import math

import numpy as np
import pytest

from conceptmeta import autodiff as ad
from conceptmeta.autodiff import Tensor
from conceptmeta.exceptions import ConfigError, DimensionError, ModeError
from conceptmeta.model import ModelConfig, ModelParams, count_parameters


def test_identity_embedding_passthrough():
    cfg = ModelConfig(input_dim=3, embed_dim=3, phi_identity=True, mode="sct",
                      label_dim=2)
    m = ModelParams(cfg)
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(m.embed(x).data, x)


def test_embed_deterministic():
    cfg = ModelConfig(input_dim=4, embed_dim=6, phi_hidden=(8,), mode="sct",
                      label_dim=2)
    m = ModelParams(cfg, seed=11)
    x = np.arange(4.0)
    assert np.array_equal(m.embed(x).data, m.embed(x).data)


def test_embed_hand_computed_hidden_layer():
    cfg = ModelConfig(input_dim=2, embed_dim=2, phi_hidden=(2,), mode="sct",
                      label_dim=2)
    m = ModelParams(cfg)
    (w1, b1), (w2, b2) = m.phi
    w1.data = np.array([[1.0, -1.0], [2.0, 0.0]])
    b1.data = np.array([0.5, -1.0])
    w2.data = np.array([[1.0, 0.0], [1.0, 1.0]])
    b2.data = np.zeros(2)
    # x=[1,2] -> pre=[5.5, -2] -> relu=[5.5, 0] -> out=[5.5, 0]
    out = m.embed(np.array([1.0, 2.0])).data
    assert np.allclose(out, [5.5, 0.0], atol=1e-15)


def test_embed_dimension_error():
    cfg = ModelConfig(input_dim=4, embed_dim=4, phi_identity=True, mode="sct",
                      label_dim=2)
    with pytest.raises(DimensionError):
        ModelParams(cfg).embed(np.ones(5))


def test_concept_project_identity_and_zero():
    m = ModelParams(ModelConfig(input_dim=2, embed_dim=2, n_concepts=2,
                                phi_identity=True, mode="sct", label_dim=2))
    m.concept_maps[0].data = np.eye(2)
    e = m.embed(np.array([0.3, -0.7]))
    assert np.allclose(m.concept_project(e, 0).data, e.data, atol=1e-15)
    m.concept_maps[1].data = np.zeros((2, 2))
    zero = m.concept_project(e, 1)
    assert np.array_equal(zero.data, np.zeros(2))
    with pytest.raises(Exception):
        ad.neg_cosine_dist(zero, e)


def test_concept_project_oracle_and_range_check():
    rng = np.random.default_rng(5)
    m = ModelParams(ModelConfig(input_dim=3, embed_dim=3, n_concepts=2,
                                phi_identity=True, mode="sct", label_dim=2))
    e = rng.normal(size=3)
    expected = e @ m.concept_maps[1].data
    assert np.allclose(m.concept_project(m.embed(e), 1).data, expected, atol=1e-12)
    with pytest.raises(IndexError):
        m.concept_project(m.embed(e), 2)


def test_concept_weights_single_concept_is_one():
    m = ModelParams(ModelConfig(input_dim=2, embed_dim=2, n_concepts=1,
                                phi_identity=True, mode="sct", label_dim=2))
    out = m.concept_weights(m.embed(np.array([1.0, 2.0]))).data
    assert out.shape == (1,) and out[0] == 1.0


def test_concept_weights_zero_head_uniform():
    m = ModelParams(ModelConfig(input_dim=2, embed_dim=2, n_concepts=4,
                                phi_identity=True, mode="sct", label_dim=2))
    for w, b in m.head:
        w.data = np.zeros_like(w.data)
        b.data = np.zeros_like(b.data)
    out = m.concept_weights(m.embed(np.array([1.0, 2.0]))).data
    assert np.allclose(out, 0.25, atol=1e-15)


def test_concept_weights_hand_set_head():
    m = ModelParams(ModelConfig(input_dim=2, embed_dim=2, n_concepts=2,
                                head_hidden=1, phi_identity=True, mode="sct",
                                label_dim=2))
    (w1, b1), (w2, b2) = m.head
    w1.data = np.array([[1.0], [1.0]])
    b1.data = np.array([0.0])
    w2.data = np.array([[2.0, -1.0]])
    b2.data = np.array([0.0, 0.0])
    # x=[1,2] -> hidden relu(3)=3 -> logits [6,-3]
    expected = np.exp([6.0, -3.0]) / np.exp([6.0, -3.0]).sum()
    out = m.concept_weights(m.embed(np.array([1.0, 2.0]))).data
    assert np.allclose(out, expected, atol=1e-12)


def test_concept_weights_simplex_many_draws():
    rng = np.random.default_rng(6)
    m = ModelParams(ModelConfig(input_dim=3, embed_dim=8, n_concepts=3,
                                phi_hidden=(8,), mode="sct", label_dim=2), seed=1)
    xs = rng.normal(size=(10_000, 3))
    out = m.concept_weights(m.embed_batch(xs)).data
    assert ((out > 0) & (out < 1)).all()
    assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-9


def test_regress_constant_and_passthrough():
    m = ModelParams(ModelConfig(input_dim=1, embed_dim=1, n_concepts=1,
                                phi_identity=True, mode="sct", task="regression",
                                label_dim=1, support_size=2))
    w, b = m.regress_heads[0]
    w.data = np.zeros(1)
    b.data = np.asarray(2.5)
    assert m.regress(m.embed(np.array([7.0])), 0).item() == 2.5
    w.data = np.ones(1)
    b.data = np.asarray(0.0)
    m.concept_maps[0].data = np.eye(1)
    assert abs(m.regress(m.embed(np.array([7.0])), 0).item() - 7.0) < 1e-12


def test_regress_hand_set_affine():
    m = ModelParams(ModelConfig(input_dim=2, embed_dim=2, n_concepts=1,
                                phi_identity=True, mode="sct", task="regression",
                                label_dim=1, support_size=2))
    m.concept_maps[0].data = np.array([[1.0, 0.0], [0.0, 2.0]])
    w, b = m.regress_heads[0]
    w.data = np.array([3.0, -1.0])
    b.data = np.asarray(0.25)
    # project([1,2]) = [1,4]; 3*1 - 4 + 0.25 = -0.75
    assert abs(m.regress(m.embed(np.array([1.0, 2.0])), 0).item() + 0.75) < 1e-12


def test_regress_mode_error_in_classification():
    m = ModelParams(ModelConfig(input_dim=2, embed_dim=2, phi_identity=True,
                                mode="sct", task="classification", label_dim=2))
    with pytest.raises(ModeError):
        m.regress(m.embed(np.array([1.0, 2.0])), 0)


@pytest.mark.parametrize("kwargs", [
    dict(input_dim=5, embed_dim=8, n_concepts=3, phi_hidden=(16, 8), mode="sct",
         task="classification", label_dim=4),
    dict(input_dim=5, embed_dim=8, n_concepts=3, phi_hidden=(16,), mode="mct",
         task="classification", label_dim=4),
    dict(input_dim=1, embed_dim=6, n_concepts=2, phi_hidden=(6, 6), mode="mct",
         task="regression", label_dim=1),
    dict(input_dim=1, embed_dim=6, n_concepts=4, phi_hidden=(6, 6), mode="sct",
         task="regression", label_dim=1, support_size=5),
    dict(input_dim=5, embed_dim=8, n_concepts=1, phi_hidden=(), mode="baseline",
         task="classification", label_dim=4),
])
def test_parameter_count_matches_closed_form(kwargs):
    cfg = ModelConfig(**kwargs)
    assert ModelParams(cfg, seed=3).parameter_count() == count_parameters(cfg)


def test_single_concept_model_exposes_one_path():
    cfg = ModelConfig(input_dim=3, embed_dim=3, n_concepts=1, phi_identity=True,
                      mode="sct", label_dim=2)
    m = ModelParams(cfg)
    assert len(m.concept_maps) == 1
    rng = np.random.default_rng(0)
    for _ in range(20):
        k = m.concept_weights(m.embed(rng.normal(size=3))).data
        assert np.array_equal(k, [1.0])


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        ModelConfig(input_dim=4, embed_dim=3, phi_identity=True, mode="sct",
                    label_dim=2)
    with pytest.raises(ConfigError):
        ModelConfig(input_dim=4, embed_dim=3, mode="nope", label_dim=2)


def test_copy_is_independent_and_frozen_copy_builds_no_graph():
    cfg = ModelConfig(input_dim=2, embed_dim=4, n_concepts=2, phi_hidden=(4,),
                      mode="sct", label_dim=2)
    m = ModelParams(cfg, seed=2)
    dup = m.copy()
    dup.phi[0][0].data[0, 0] += 1.0
    assert m.phi[0][0].data[0, 0] != dup.phi[0][0].data[0, 0]
    frozen = m.frozen_copy()
    out = frozen.embed_batch(np.ones((3, 2)))
    assert not out.requires_grad and out._parents == ()
