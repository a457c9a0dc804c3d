import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource
from conceptmeta.trainer import meta_train
from conceptmeta.evaluation import accuracy_over_trials, concept_id_rate
from conceptmeta import sct

def settings(mode, episodes, seed=0):
    return SimpleNamespace(experiment='glyph-sct', mode=mode, seed=seed,
        episodes=episodes, learning_rate=1e-3, omega_form='none', omega_lambda=0.0,
        selector='learned', warmup_points=0, warmup_steps=0,
        val_interval=0, val_episodes=0, checkpoint_interval=0, config_hash='x')

src = GlyphSource('sct-attr', n_way=5, k_shot=1, query_per_class=3, seed=0)
for sigma in (0.3, 1.0):
    t0 = time.time()
    mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                     mode='sct', task='classification', label_dim=5,
                     concept_map_noise=sigma)
    m = ModelParams(mc, seed=0)
    meta_train(settings('sct', 4000), m, src)
    rate = concept_id_rate(m, src, 400)
    acc, ci = accuracy_over_trials(m, src, 800, 'sct')
    # per-true-concept upsilon breakdown
    frozen = m.frozen_copy()
    picks = {0: [], 1: []}
    for t in range(300):
        ep, meta = src.sample_test(t)
        u = sct.task_concept_prob(ep, frozen).data
        picks[meta.concept_id].append(u)
    m0 = np.mean(np.stack(picks[0]), axis=0)
    m1 = np.mean(np.stack(picks[1]), axis=0)
    print('sigma=%.2f: id_rate=%.3f acc=%.4f+-%.4f mean_ups: shape-ep=%s color-ep=%s (%.0f s)'
          % (sigma, rate, acc, ci, np.round(m0,3), np.round(m1,3), time.time()-t0), flush=True)
