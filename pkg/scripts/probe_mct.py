import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, make_mct_testset, sample_mixed_instances
from conceptmeta.trainer import meta_train
from conceptmeta.evaluation import per_concept_accuracy
from conceptmeta.baselines import FlatClassifier, train_flat_classifier

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
t0 = time.time()
meta_train(settings(4000, seed), m, src)
print('mct train %.0f s, prototypes=%d' % (time.time()-t0, len(m.prototypes)), flush=True)
feats, labels = make_mct_testset(1500, seed)
res = per_concept_accuracy(m, feats, labels)
print('mct matrix=\n%s assignment=%s acc=%s' % (np.round(res['matrix'],3),
      res['assignment'], np.round(res['accuracies'],4)), flush=True)

clf = FlatClassifier(768, 16, hidden=(128,128), seed=seed)
def batch(i):
    feats, chosen, _, _ = sample_mixed_instances(128, [seed, 10, i])
    return feats, chosen
t1 = time.time()
train_flat_classifier(clf, batch, steps=1500, lr=1e-3)
preds = clf.predict(feats)
sl_shape = float(np.mean(preds == labels[:,0]))
sl_color = float(np.mean(preds == labels[:,1]))
print('SL: shape=%.4f color=%.4f (train %.0f s)' % (sl_shape, sl_color, time.time()-t1), flush=True)
