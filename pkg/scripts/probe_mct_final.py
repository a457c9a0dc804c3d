import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, make_mct_testset, sample_mixed_instances
from conceptmeta.trainer import meta_train
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
meta_train(settings(8000, seed, 4), m, src)
feats, labels = make_mct_testset(1500, seed)
res = per_concept_accuracy(m, feats, labels)
print('end-to-end mct: acc=%s assignment=%s (%.0f s)' % (np.round(res['accuracies'],4),
      res['assignment'], time.time()-t0), flush=True)
clf = FlatClassifier(768, 16, hidden=(128,128), seed=seed)
def batch(i):
    f, chosen, _, _ = sample_mixed_instances(128, [seed, 10, i])
    return f, chosen
train_flat_classifier(clf, batch, steps=1500, lr=1e-3)
preds = clf.predict(feats)
print('SL: shape=%.4f color=%.4f' % (np.mean(preds == labels[:,0]),
      np.mean(preds == labels[:,1])), flush=True)
