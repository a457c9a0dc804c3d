import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import FamilySource
from conceptmeta.trainer import meta_train
from conceptmeta.evaluation import mse_over_trials

def settings(episodes, seed, lr=1e-3):
    return SimpleNamespace(experiment='family-regression', mode='sct', seed=seed,
        episodes=episodes, episodes_per_step=1, learning_rate=lr,
        omega_form='none', omega_lambda=0.0, selector='learned',
        warmup_points=0, warmup_steps=0, val_interval=0, val_episodes=0,
        checkpoint_interval=0, config_hash='x')

for k in (5, 10):
    res = {}
    for name, C in (('lead', 4), ('base', 1)):
        src = FamilySource(k_shot=k, query_size=100, seed=0)
        mc = ModelConfig(input_dim=1, embed_dim=40, n_concepts=C, phi_hidden=(40, 40),
                         mode='sct', task='regression', label_dim=1, support_size=k)
        m = ModelParams(mc, seed=0)
        t0 = time.time()
        meta_train(settings(10000, 0), m, src)
        mean, half = mse_over_trials(m, src, trials=4000)
        res[name] = mean
        print('%d-shot %s C=%d: mse=%.4f+-%.4f (%.0f s)' % (k, name, C, mean, half,
              time.time()-t0), flush=True)
    print('%d-shot: improvement=%.1f%%' % (k, 100*(1 - res['lead']/res['base'])), flush=True)
