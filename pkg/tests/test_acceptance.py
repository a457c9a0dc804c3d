"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

These are the behavioral exit criteria, run at their stated tolerances with
the regularizer switched off (lambda = 0) throughout. The training-based
criteria take minutes; run with ``pytest tests/test_acceptance.py -v -s`` to
watch the per-criterion lines.
"""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from conceptmeta import autodiff as ad
from conceptmeta import evaluation as ev
from conceptmeta import mct, sct
from conceptmeta.autodiff import Tensor
from conceptmeta.baselines import FlatClassifier, train_flat_classifier
from conceptmeta.checkpoint import load_checkpoint, save_checkpoint
from conceptmeta.episodes import Episode, Instance
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.posterior import (BatchedEpisode, multi_concept_posterior,
                                   proto_posterior)
from conceptmeta.taskgen import (ConfusingSource, FamilySource, GlyphSource,
                                 make_mct_testset, sample_mixed_instances)
from conceptmeta.trainer import meta_train

from helpers import small_classification_episode

GLYPH = dict(input_dim=768, embed_dim=32, phi_hidden=(128, 128),
             task="classification")


def _settings(experiment, mode, episodes, seed, group=1, lr=1e-3, **kw):
    base = dict(experiment=experiment, mode=mode, seed=seed, episodes=episodes,
                episodes_per_step=group, learning_rate=lr, omega_form="none",
                omega_lambda=0.0, selector="learned", warmup_points=50,
                warmup_steps=2000, val_interval=0, val_episodes=0,
                checkpoint_interval=0, triplet_cap=64, config_hash="acceptance")
    base.update(kw)
    return SimpleNamespace(**base)


def _report(num, name, ok, detail):
    print(f"\nACCEPTANCE {num} ({name}): {'PASS' if ok else 'FAIL'} — {detail}")
    return ok


# -- criterion 1: gradient correctness ---------------------------------------


def _fd_all_params(m, loss_fn, rtol=1e-4, atol=1e-6, step=1e-5):
    m.zero_grad()
    loss_fn().backward()
    for name, p in m.named_parameters().items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn().item()
            flat[i] = orig - step
            lo = loss_fn().item()
            flat[i] = orig
            fd[i] = (hi - lo) / (2 * step)
        if not np.allclose(analytic.reshape(-1), fd, rtol=rtol, atol=atol):
            return name
    return None


def test_criterion_1_gradient_correctness():
    rng = np.random.default_rng(0)
    failures = []

    # primitives, 50 random configurations each
    prims = {
        "matmul": lambda a, b: ad.matmul(ad.reshape(a, (2, a.data.size // 2)),
                                         ad.reshape(b, (b.data.size // 2, 2))),
        "softmax": lambda a, b: ad.softmax(ad.add(a, b)),
        "neg_cosine": lambda a, b: ad.neg_cosine_dist(a, b),
        "sigmoid_exp_log": lambda a, b: ad.log(ad.add(ad.exp(ad.sigmoid(a)),
                                                      ad.mul(b, b))),
        "squared_error": lambda a, b: ad.squared_error(a, b),
        "concat_relu": lambda a, b: ad.relu(ad.concat([a, b])),
    }
    from helpers import finite_difference, grads_close
    for name, op in prims.items():
        for _ in range(50):
            arrays = [rng.normal(size=4) + 0.1, rng.normal(size=4) + 0.1]
            weights = rng.normal(size=op(Tensor(arrays[0]), Tensor(arrays[1])).shape)

            def f(arrs):
                out = op(Tensor(arrs[0]), Tensor(arrs[1]))
                return float((out.data * weights).sum())

            params = [ad.parameter(a.copy()) for a in arrays]
            ad.tsum(ad.mul(op(*params), Tensor(weights))).backward()
            fd = finite_difference(f, arrays)
            if not all(grads_close(p.grad, g) for p, g in zip(params, fd)):
                failures.append(name)
                break

    # composed multi-concept posterior loss
    for trial in range(50):
        n_way = int(rng.integers(2, 4))
        m = ModelParams(ModelConfig(input_dim=3, embed_dim=4, n_concepts=2,
                                    phi_hidden=(4,), mode="sct", label_dim=n_way),
                        seed=trial)
        ep = small_classification_episode(n_way=n_way, k_shot=1, queries=2,
                                          dim=3, seed=trial)

        def eq3_loss():
            terms = [ad.neg(ad.log(ad.index(
                multi_concept_posterior(q, ep, m).probs,
                ep.classes.index(q.label)))) for q in ep.query]
            return ad.tmean(ad.stack(terms))

        bad = _fd_all_params(m, eq3_loss)
        if bad:
            failures.append(f"multi-concept posterior loss [{bad}]")
            break

    # composed task-selector posterior loss
    for trial in range(50):
        m = ModelParams(ModelConfig(input_dim=3, embed_dim=4, n_concepts=2,
                                    phi_hidden=(4,), mode="sct", label_dim=2),
                        seed=100 + trial)
        ep = small_classification_episode(n_way=2, k_shot=2, queries=2,
                                          dim=3, seed=100 + trial)
        triplets = sct.mine_triplets(ep, m)

        def eq5_loss():
            upsilon = sct.task_concept_prob(ep, m, triplets)
            terms = []
            for q in ep.query:
                post = sct.sct_posterior(q, ep, m)
                terms.append(ad.neg(ad.log(ad.index(
                    post.probs, post.classes.index(q.label)))))
            return ad.add(ad.tmean(ad.stack(terms)),
                          ad.mul(Tensor(0.0), ad.tsum(upsilon)))

        bad = _fd_all_params(m, eq5_loss)
        if bad:
            failures.append(f"task-selector posterior loss [{bad}]")
            break

    # composed instance-selector masked loss
    for trial in range(50):
        m = ModelParams(ModelConfig(input_dim=3, embed_dim=4, n_concepts=2,
                                    phi_hidden=(4,), mode="mct", label_dim=2),
                        seed=200 + trial)
        ep = small_classification_episode(n_way=2, k_shot=1, queries=2,
                                          dim=3, seed=200 + trial)

        def eq6_loss():
            terms = [ad.neg(ad.log(mct.mct_posterior(q, q.label, ep, m).likelihood))
                     for q in ep.query]
            return ad.tmean(ad.stack(terms))

        bad = _fd_all_params(m, eq6_loss)
        if bad:
            failures.append(f"instance-selector posterior loss [{bad}]")
            break

    ok = not failures
    assert _report(1, "gradient correctness", ok,
                   "all finite-difference checks within rel 1e-4"
                   if ok else f"failed: {failures}")


# -- criterion 2: degeneracy to the single-embedding posterior ----------------


def test_criterion_2_degeneracy():
    rng = np.random.default_rng(1)
    worst = 0.0
    for trial in range(1000):
        n_way = int(rng.integers(2, 5))
        k_shot = int(rng.integers(1, 3))
        m = ModelParams(ModelConfig(input_dim=4, embed_dim=5, n_concepts=1,
                                    phi_hidden=(6,), mode="sct", label_dim=n_way),
                        seed=trial)
        m.concept_maps[0].data = np.eye(5)
        ep = small_classification_episode(n_way=n_way, k_shot=k_shot, queries=1,
                                          dim=4, seed=trial)
        a = proto_posterior(ep.query[0], ep, m).probs.data
        b = multi_concept_posterior(ep.query[0], ep, m).probs.data
        worst = max(worst, float(np.abs(a - b).max()))
    ok = worst < 1e-10
    assert _report(2, "degeneracy to single embedding", ok,
                   f"max deviation {worst:.2e} over 1000 episodes (tol 1e-10)")


# -- criterion 3: confusing regression recovery -------------------------------


def test_criterion_3_confusing_regression():
    t0 = time.perf_counter()

    def run(seed, selector):
        mc = ModelConfig(input_dim=1, embed_dim=40, n_concepts=3,
                         phi_hidden=(40, 40), mode="mct", task="regression",
                         label_dim=1)
        m = ModelParams(mc, seed=seed)
        cfg = _settings("confusing-regression", "mct", 6000, seed, lr=2e-3,
                        selector=selector)
        meta_train(cfg, m, ConfusingSource(batch_size=128, seed=seed))
        return max(ev.regression_concept_mse(m)["mses"])

    full = [run(seed, "learned") for seed in range(5)]
    degenerate = [run(seed, "uniform") for seed in range(5)]
    passes = sum(v < 0.05 for v in full)
    degenerate_fails = sum(v >= 0.05 for v in degenerate)
    ok = passes >= 4 and degenerate_fails == 5
    assert _report(3, "confusing regression recovery", ok,
                   f"full model < 0.05 on {passes}/5 seeds "
                   f"(worst per seed: {[f'{v:.4f}' for v in full]}); "
                   f"averaged variant fails on {degenerate_fails}/5 "
                   f"({time.perf_counter() - t0:.0f}s)")


# -- criterion 4: random-family regression ------------------------------------


def test_criterion_4_family_regression():
    t0 = time.perf_counter()
    results = {}
    for k_shot in (5, 10):
        for name, n_concepts in (("lead", 4), ("base", 1)):
            src = FamilySource(k_shot=k_shot, query_size=100, seed=0)
            mc = ModelConfig(input_dim=1, embed_dim=40, n_concepts=n_concepts,
                             phi_hidden=(40, 40), mode="sct", task="regression",
                             label_dim=1, support_size=k_shot)
            m = ModelParams(mc, seed=0)
            meta_train(_settings("family-regression", "sct", 10000, 0), m, src)
            mean, _ = ev.mse_over_trials(m, src, trials=4000)
            results[(k_shot, name)] = mean
    gain5 = 1 - results[(5, "lead")] / results[(5, "base")]
    gain10 = 1 - results[(10, "lead")] / results[(10, "base")]
    monotone = results[(10, "lead")] < results[(5, "lead")]
    ok = gain5 >= 0.20 and gain10 >= 0.20 and monotone
    assert _report(4, "random-family regression", ok,
                   f"5-shot {results[(5, 'lead')]:.3f} vs {results[(5, 'base')]:.3f} "
                   f"({gain5:.0%} better); 10-shot {results[(10, 'lead')]:.3f} vs "
                   f"{results[(10, 'base')]:.3f} ({gain10:.0%} better); "
                   f"10-shot < 5-shot: {monotone} ({time.perf_counter() - t0:.0f}s)")


# -- criterion 5: mixed-concept classification ---------------------------------


def test_criterion_5_mixed_concept_classification():
    t0 = time.perf_counter()
    seed = 0
    src = GlyphSource("mct-mixed", n_way=5, k_shot=1, query_per_class=3, seed=seed)
    m = ModelParams(ModelConfig(n_concepts=2, mode="mct", label_dim=5, **GLYPH),
                    seed=seed)
    meta_train(_settings("glyph-mct", "mct", 8000, seed, group=4), m, src)
    feats, labels = make_mct_testset(1500, seed)
    res = ev.per_concept_accuracy(m, feats, labels)
    shape_acc, color_acc = res["accuracies"]

    clf = FlatClassifier(768, 16, hidden=(128, 128), seed=seed)
    train_flat_classifier(
        clf, lambda i: sample_mixed_instances(128, [seed, 10, i])[:2],
        steps=1500, lr=1e-3)
    preds = clf.predict(feats)
    sl_shape = float(np.mean(preds == labels[:, 0]))
    sl_color = float(np.mean(preds == labels[:, 1]))

    ok = (color_acc >= 0.90 and shape_acc >= 0.60
          and shape_acc > sl_shape and color_acc > sl_color
          and (sl_shape < 0.60 or sl_color < 0.60))
    assert _report(5, "mixed-concept classification", ok,
                   f"matched accuracies shape={shape_acc:.3f} color={color_acc:.3f} "
                   f"vs flat baseline shape={sl_shape:.3f} color={sl_color:.3f} "
                   f"({time.perf_counter() - t0:.0f}s)")


# -- criterion 6: task concept identification ----------------------------------


def test_criterion_6_task_concept_identification():
    t0 = time.perf_counter()
    seed = 0
    src = GlyphSource("sct-attr", n_way=5, k_shot=1, query_per_class=3, seed=seed)
    m = ModelParams(ModelConfig(n_concepts=2, mode="sct", label_dim=5, **GLYPH),
                    seed=seed)
    meta_train(_settings("glyph-sct", "sct", 10000, seed, group=10, lr=2e-3), m, src)
    id_rate = ev.concept_id_rate(m, src, 500)
    acc, _ = ev.accuracy_over_trials(m, src, 2000, "sct")

    b = ModelParams(ModelConfig(n_concepts=1, mode="baseline", label_dim=5, **GLYPH),
                    seed=seed)
    meta_train(_settings("glyph-sct", "baseline", 10000, seed), b, src)
    bacc, _ = ev.accuracy_over_trials(b, src, 2000, "baseline")

    ok = id_rate >= 0.90 and acc - bacc >= 0.03
    assert _report(6, "task concept identification", ok,
                   f"selector matches episode concept {id_rate:.1%}; query acc "
                   f"{acc:.4f} vs baseline {bacc:.4f} (gap {acc - bacc:+.4f}, "
                   f"needs >= +0.03) ({time.perf_counter() - t0:.0f}s)")


# -- criterion 7: out-of-distribution robustness --------------------------------


def test_criterion_7_ood_robustness():
    t0 = time.perf_counter()

    def pair(plan, std, jitter, dropout, seed, episodes):
        src = GlyphSource("ood", n_way=5, k_shot=1, query_per_class=3, plan=plan,
                          color_noise_std=std, jitter=jitter, mask_dropout=dropout,
                          seed=seed)
        m = ModelParams(ModelConfig(n_concepts=2, mode="sct", label_dim=5, **GLYPH),
                        seed=seed)
        meta_train(_settings("glyph-ood", "sct", episodes, seed, group=10, lr=2e-3),
                   m, src)
        acc, _ = ev.accuracy_over_trials(m, src, 300, "sct", split="novel")
        b = ModelParams(ModelConfig(n_concepts=1, mode="baseline", label_dim=5,
                                    **GLYPH), seed=seed)
        meta_train(_settings("glyph-ood", "baseline", episodes, seed), b, src)
        bacc, _ = ev.accuracy_over_trials(b, src, 300, "baseline", split="novel")
        return acc, bacc

    draw_class = [pair("DrawClass", 0.001, 2, 0.5, seed, 3000) for seed in range(5)]
    ordering = sum(a > b for a, b in draw_class)
    draw_task = [pair("DrawTask", 0.1, 0, 0.0, seed, 2000) for seed in range(5)]
    both_high = sum(a > 0.90 and b > 0.90 for a, b in draw_task)
    ok = ordering >= 4 and both_high >= 4
    assert _report(7, "out-of-distribution robustness", ok,
                   f"DrawClass novel-palette ordering holds {ordering}/5 "
                   f"(pairs: {[(round(a, 3), round(b, 3)) for a, b in draw_class]}); "
                   f"DrawTask both > 0.90 on {both_high}/5 "
                   f"({time.perf_counter() - t0:.0f}s)")


# -- criterion 8: protocol invariants -------------------------------------------


def test_criterion_8_protocol_invariants(tmp_path):
    rng = np.random.default_rng(8)
    checks = {}

    # posterior normalization over random episodes
    worst = 0.0
    for trial in range(1000):
        n_way = int(rng.integers(2, 5))
        m = ModelParams(ModelConfig(input_dim=4, embed_dim=5, n_concepts=3,
                                    phi_hidden=(5,), mode="sct", label_dim=n_way),
                        seed=trial)
        ep = small_classification_episode(n_way=n_way, k_shot=1, queries=1,
                                          dim=4, seed=5000 + trial)
        post = multi_concept_posterior(ep.query[0], ep, m)
        worst = max(worst, abs(float(post.probs.data.sum()) - 1.0))
    checks["posterior normalization"] = worst < 1e-8

    # selector / concept-probability simplex membership
    m = ModelParams(ModelConfig(input_dim=4, embed_dim=6, n_concepts=3,
                                phi_hidden=(6,), mode="sct", label_dim=3), seed=1)
    kappas = m.concept_weights(m.embed_batch(rng.normal(size=(500, 4)))).data
    simplex = ((kappas > 0).all() and (kappas < 1).all()
               and np.abs(kappas.sum(axis=1) - 1).max() < 1e-9)
    ep = small_classification_episode(n_way=3, k_shot=2, queries=1, dim=4, seed=42)
    ups = sct.task_concept_prob(ep, m).data
    simplex = simplex and abs(ups.sum() - 1) < 1e-9 and (ups > 0).all()
    checks["simplex membership"] = bool(simplex)

    # triplet-order invariance of the task selector
    triplets = sct.mine_triplets(ep, m)
    base = sct.task_concept_prob(ep, m, triplets).data
    inv = True
    for _ in range(10):
        perm = [triplets[i] for i in rng.permutation(len(triplets))]
        inv = inv and np.abs(sct.task_concept_prob(ep, m, perm).data - base).max() < 1e-12
    checks["triplet-order invariance"] = inv

    # support-permutation invariance of the instance selector
    mm = ModelParams(ModelConfig(input_dim=4, embed_dim=5, n_concepts=2,
                                 phi_hidden=(5,), mode="mct", label_dim=3), seed=2)
    ep2 = small_classification_episode(n_way=3, k_shot=2, queries=1, dim=4, seed=77)
    q = ep2.query[0]
    base2 = mct.instance_concept_prob(q, q.label, ep2, mm).data
    inv2 = True
    for _ in range(10):
        order = rng.permutation(len(ep2.support))
        shuffled = Episode(support=[ep2.support[i] for i in order], query=ep2.query,
                           n_way=3, k_shot=2, task="classification", seed=ep2.seed)
        out = mct.instance_concept_prob(q, q.label, shuffled, mm).data
        inv2 = inv2 and np.abs(out - base2).max() < 1e-12
    checks["support-permutation invariance"] = inv2

    # checkpoint round-trip bit-exactness
    mm.prototypes[(0, 1)] = rng.normal(size=5)
    path = tmp_path / "inv.ckpt"
    save_checkpoint(path, mm.state_arrays(), "text")
    _, arrays = load_checkpoint(path)
    dup = ModelParams(mm.config, seed=9)
    dup.load_state_arrays(arrays)
    exact = all(np.array_equal(p.data, dup.named_parameters()[k].data)
                for k, p in mm.named_parameters().items())
    exact = exact and np.array_equal(mm.prototypes[(0, 1)], dup.prototypes[(0, 1)])
    checks["checkpoint round-trip"] = exact

    # seed determinism of a short training run
    def short_run():
        src = GlyphSource("sct-attr", n_way=3, k_shot=1, query_per_class=2, seed=3)
        model = ModelParams(ModelConfig(input_dim=768, embed_dim=8, n_concepts=2,
                                        phi_hidden=(16,), mode="sct", label_dim=3),
                            seed=3)
        meta_train(_settings("glyph-sct", "sct", 12, 3, group=3, lr=2e-3), model, src)
        return np.concatenate([p.data.ravel()
                               for p in model.named_parameters().values()])

    checks["seed determinism"] = bool(np.array_equal(short_run(), short_run()))

    ok = all(checks.values())
    assert _report(8, "protocol invariants", ok,
                   "; ".join(f"{k}: {'ok' if v else 'FAILED'}"
                             for k, v in checks.items()))
