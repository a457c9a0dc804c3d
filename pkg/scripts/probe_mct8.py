import time
import numpy as np
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, make_mct_testset, render_glyph, BASE_COLORS
from conceptmeta.posterior import BatchedEpisode
from conceptmeta.trainer import Adam
from conceptmeta import mct
from conceptmeta.sct import neg_cos_matrix
from conceptmeta.evaluation import per_concept_accuracy

seed = 0
src = GlyphSource('mct-mixed', n_way=5, k_shot=1, query_per_class=3, seed=seed)
mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                 mode='mct', task='classification', label_dim=5)
m = ModelParams(mc, seed=seed)
opt = Adam(m.named_parameters(), lr=1e-3)
router = mct.LabelRouter(2, decay=0.98, slack=0.25, burn_in=600)
routes = {}
for step in range(6000 // 4):
    m.zero_grad()
    episodes, batches = [], []
    for g in range(4):
        ep, _ = src.sample_train(step*4+g)
        episodes.append(ep); batches.append(BatchedEpisode(ep, m, concepts=False))
    loss, routes, _ = mct.mct_label_routed_losses(batches, episodes, m, router)
    loss.backward(); opt.step()

frozen = m.frozen_copy()
rng = np.random.default_rng(9)
imgs, shp, col = [], [], []
for i in range(600):
    s, c = int(rng.integers(0, 10)), int(rng.integers(0, 6))
    imgs.append(render_glyph(s, BASE_COLORS[c], rng, 0.05))
    shp.append(s); col.append(c)
imgs = np.stack(imgs); shp = np.array(shp); col = np.array(col)
E = frozen.embed_batch(imgs).data
for space in (0, 1):
    P = E @ frozen.concept_maps[space].data
    D = -neg_cos_matrix(P, P)
    same_color = D[(col[:,None]==col[None,:]) & (shp[:,None]!=shp[None,:])].mean()
    same_shape = D[(shp[:,None]==shp[None,:]) & (col[:,None]!=col[None,:])].mean()
    diff_both = D[(shp[:,None]!=shp[None,:]) & (col[:,None]!=col[None,:])].mean()
    print('space %d: cos(same color)=%.3f cos(same shape)=%.3f cos(diff both)=%.3f'
          % (space, same_color, same_shape, diff_both), flush=True)
# color confusion via fresh-center prototypes
sums, counts = {}, {}
for t in range(150):
    ep, _ = src.sample_train(6000 + t)
    emb = frozen.embed_batch(ep.support_features()).data
    for i, inst in enumerate(ep.support):
        sums[inst.label] = sums.get(inst.label, 0.0) + emb[i]
        counts[inst.label] = counts.get(inst.label, 0) + 1
centers = {l: sums[l]/counts[l] for l in sums}
mct.materialize_prototypes(m, centers, routes)
feats, labels = make_mct_testset(1200, seed)
preds = mct.deploy_predict_batch(feats, frozen if False else m, 1)
conf = np.zeros((6,6), dtype=int)
for p, t in zip(preds, labels[:,1]):
    conf[t-10, p-10] += 1
print('color confusion:\n', conf, flush=True)
