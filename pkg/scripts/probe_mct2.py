import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, make_mct_testset
from conceptmeta.trainer import meta_train, validation_metric
from conceptmeta import mct
from conceptmeta.posterior import BatchedEpisode
from conceptmeta.sct import neg_cos_matrix

def settings(episodes, seed):
    return SimpleNamespace(experiment='glyph-mct', mode='mct', seed=seed,
        episodes=episodes, episodes_per_step=1, learning_rate=1e-3,
        omega_form='none', omega_lambda=0.0, selector='learned',
        warmup_points=0, warmup_steps=0, val_interval=0, val_episodes=0,
        checkpoint_interval=0, config_hash='x')

seed = 0
src = GlyphSource('mct-mixed', n_way=5, k_shot=1, query_per_class=3, seed=seed)
mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                 mode='mct', task='classification', label_dim=5)
m = ModelParams(mc, seed=seed)
m.head[1][0].data[:] = 0.0; m.head[1][1].data[:] = 0.0
meta_train(settings(4000, seed), m, src)
frozen = m.frozen_copy()

# (a) episodic accuracy
units = [src.sample_val(j) for j in range(40)]
acc = validation_metric(frozen, units, 'glyph-mct', 'mct')
print('episodic query acc:', round(acc, 4), flush=True)

# (b) kappa spread
feats, labels = make_mct_testset(400, seed)
K = frozen.concept_weights(frozen.embed_batch(feats)).data
print('kappa mean:', np.round(K.mean(axis=0), 3), 'std:', np.round(K.std(axis=0), 3), flush=True)

# (c) upsilon by true concept (upsilon needs episodes; sample)
ups = {0: [], 1: []}
for t in range(60):
    ep, meta = src.sample_test(t)
    batch = BatchedEpisode(ep, frozen, concepts=False)
    _, urows, _ = mct.mct_episode_outputs(batch, ep, frozen)
    for row, c in zip(urows, meta.query_concepts):
        ups[c].append(row)
print('mean upsilon shape-instances:', np.round(np.mean(ups[0], axis=0), 3),
      'color-instances:', np.round(np.mean(ups[1], axis=0), 3), flush=True)

# (d) oracle centroid classification in each concept space
E = frozen.embed_batch(feats).data
for c in range(2):
    P = E @ frozen.concept_maps[c].data
    cents_shape = np.stack([P[labels[:,0]==s].mean(axis=0) for s in range(10)])
    cents_color = np.stack([P[labels[:,1]==cc].mean(axis=0) for cc in range(10,16)])
    d_shape = neg_cos_matrix(P, cents_shape)
    d_color = neg_cos_matrix(P, cents_color)
    acc_shape = np.mean(np.argmin(d_shape, axis=1) == labels[:,0])
    acc_color = np.mean(np.argmin(d_color, axis=1) + 10 == labels[:,1])
    print('space %d oracle-centroid: shape=%.3f color=%.3f' % (c, acc_shape, acc_color), flush=True)

# (e) prototype norms/quality
for c in range(2):
    norms = [np.linalg.norm(v) for (cc,l),v in m.prototypes.items() if cc==c]
    print('space %d prototype norms: min=%.2e max=%.2e' % (c, min(norms), max(norms)), flush=True)
