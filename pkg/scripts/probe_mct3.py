import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, make_mct_testset, sample_mixed_instances
from conceptmeta.trainer import meta_train, validation_metric
from conceptmeta.evaluation import per_concept_accuracy
from conceptmeta.baselines import FlatClassifier, train_flat_classifier

def settings(episodes, seed, group):
    return SimpleNamespace(experiment='glyph-mct', mode='mct', seed=seed,
        episodes=episodes, episodes_per_step=group, learning_rate=1e-3,
        omega_form='none', omega_lambda=0.0, selector='learned',
        warmup_points=0, warmup_steps=0, val_interval=0, val_episodes=0,
        checkpoint_interval=0, config_hash='x')

seed = 0
src = GlyphSource('mct-mixed', n_way=5, k_shot=1, query_per_class=3, seed=seed)
mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                 mode='mct', task='classification', label_dim=5)
m = ModelParams(mc, seed=seed)
t0 = time.time()
meta_train(settings(6000, seed, 4), m, src)
print('mct grouped train %.0f s protos=%d' % (time.time()-t0, len(m.prototypes)), flush=True)
units = [src.sample_val(j) for j in range(40)]
print('episodic acc:', round(validation_metric(m.frozen_copy(), units, 'glyph-mct', 'mct'), 4), flush=True)
feats, labels = make_mct_testset(1500, seed)
res = per_concept_accuracy(m, feats, labels)
print('matrix=\n%s assign=%s acc=%s' % (np.round(res['matrix'],3), res['assignment'],
      np.round(res['accuracies'],4)), flush=True)
