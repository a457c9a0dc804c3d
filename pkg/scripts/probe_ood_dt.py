import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource
from conceptmeta.trainer import meta_train
from conceptmeta.evaluation import accuracy_over_trials

def settings(mode, episodes, gstep, lr, seed):
    return SimpleNamespace(experiment='glyph-ood', mode=mode, seed=seed,
        episodes=episodes, episodes_per_step=gstep, learning_rate=lr,
        omega_form='none', omega_lambda=0.0, selector='learned',
        warmup_points=0, warmup_steps=0, val_interval=0, val_episodes=0,
        checkpoint_interval=0, config_hash='x')

def run(drop, jit, seed):
    src = GlyphSource('ood', n_way=5, k_shot=1, query_per_class=3,
                      plan='DrawTask', color_noise_std=0.1, jitter=jit,
                      mask_dropout=drop, seed=seed)
    mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                     mode='sct', task='classification', label_dim=5)
    m = ModelParams(mc, seed=seed)
    meta_train(settings('sct', 3000, 10, 2e-3, seed), m, src)
    acc, _ = accuracy_over_trials(m, src, 300, 'sct', split='novel')
    bc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=1, phi_hidden=(128,128),
                     mode='baseline', task='classification', label_dim=5)
    b = ModelParams(bc, seed=seed)
    meta_train(settings('baseline', 3000, 1, 1e-3, seed), b, src)
    bacc, _ = accuracy_over_trials(b, src, 300, 'baseline', split='novel')
    print('DrawTask drop=%.2f jit=%d seed=%d: lead=%.4f base=%.4f both>0.9=%s'
          % (drop, jit, seed, acc, bacc, acc > 0.9 and bacc > 0.9), flush=True)

for seed in (0, 1):
    run(0.0, 2, seed)
for seed in (0, 1):
    run(0.0, 0, seed)
