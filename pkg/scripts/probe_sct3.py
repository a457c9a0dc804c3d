import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource
from conceptmeta.trainer import meta_train
from conceptmeta.evaluation import accuracy_over_trials, concept_id_rate
from conceptmeta import sct

def settings(mode, episodes, gstep, seed=0):
    return SimpleNamespace(experiment='glyph-sct', mode=mode, seed=seed,
        episodes=episodes, episodes_per_step=gstep, learning_rate=1e-3,
        omega_form='none', omega_lambda=0.0, selector='learned',
        warmup_points=0, warmup_steps=0, val_interval=0, val_episodes=0,
        checkpoint_interval=0, config_hash='x')

src = GlyphSource('sct-attr', n_way=5, k_shot=1, query_per_class=3, seed=0)
t0 = time.time()
mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                 mode='sct', task='classification', label_dim=5)
m = ModelParams(mc, seed=0)
meta_train(settings('sct', 6000, 6), m, src)
rate = concept_id_rate(m, src, 500)
acc, ci = accuracy_over_trials(m, src, 1000, 'sct')
frozen = m.frozen_copy()
picks = {0: [], 1: []}
for t in range(300):
    ep, meta = src.sample_test(t)
    picks[meta.concept_id].append(sct.task_concept_prob(ep, frozen).data)
print('grouped sct: id_rate=%.3f acc=%.4f+-%.4f shape-ups=%s color-ups=%s (%.0f s)'
      % (rate, acc, ci, np.round(np.mean(picks[0],axis=0),3),
         np.round(np.mean(picks[1],axis=0),3), time.time()-t0), flush=True)
