import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource
from conceptmeta.trainer import meta_train
from conceptmeta.evaluation import accuracy_over_trials, concept_id_rate

def settings(mode, episodes, seed=0):
    return SimpleNamespace(experiment='glyph-sct', mode=mode, seed=seed,
        episodes=episodes, learning_rate=1e-3, omega_form='none', omega_lambda=0.0,
        selector='learned', warmup_points=0, warmup_steps=0,
        val_interval=0, val_episodes=0, checkpoint_interval=0, config_hash='x')

src = GlyphSource('sct-attr', n_way=5, k_shot=1, query_per_class=3, seed=0)
t0 = time.time()
mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                 mode='sct', task='classification', label_dim=5)
m = ModelParams(mc, seed=0)
meta_train(settings('sct', 4000), m, src)
print('sct train %.1f s' % (time.time()-t0), flush=True)
t1 = time.time()
rate = concept_id_rate(m, src, 500)
acc, ci = accuracy_over_trials(m, src, 2000, 'sct')
print('sct: concept_id_rate=%.3f acc=%.4f+-%.4f (eval %.0f s)' % (rate, acc, ci, time.time()-t1), flush=True)

bc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=1, phi_hidden=(128,128),
                 mode='baseline', task='classification', label_dim=5)
b = ModelParams(bc, seed=0)
t2 = time.time()
meta_train(settings('baseline', 4000), b, src)
print('baseline train %.1f s' % (time.time()-t2), flush=True)
bacc, bci = accuracy_over_trials(b, src, 2000, 'baseline')
print('baseline acc=%.4f+-%.4f  gap=%.4f' % (bacc, bci, acc-bacc), flush=True)
