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

def run(plan, std, drop, seed):
    src = GlyphSource('ood', n_way=5, k_shot=1, query_per_class=3,
                      plan=plan, color_noise_std=std, jitter=2,
                      mask_dropout=drop, seed=seed)
    t0 = time.time()
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
    print('%s std=%g drop=%.2f seed=%d: lead=%.4f base=%.4f ord=%s (%.0f s)'
          % (plan, std, drop, seed, acc, bacc, acc > bacc, time.time()-t0), flush=True)
    return acc, bacc

dc = [run('DrawClass', 0.001, 0.5, s) for s in range(5)]
print('DrawClass ordering holds:', sum(a > b for a, b in dc), 'of 5', flush=True)
dt = [run('DrawTask', 0.1, 0.15, s) for s in range(5)]
print('DrawTask both>0.9:', sum(a > 0.9 and b > 0.9 for a, b in dt), 'of 5', flush=True)
