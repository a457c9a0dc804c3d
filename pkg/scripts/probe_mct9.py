import numpy as np
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, render_glyph, BASE_COLORS
from conceptmeta.posterior import BatchedEpisode
from conceptmeta.trainer import Adam
from conceptmeta import mct
from conceptmeta.sct import neg_cos_matrix

seed = 0
src = GlyphSource('mct-mixed', n_way=5, k_shot=1, query_per_class=3, seed=seed)
mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                 mode='mct', task='classification', label_dim=5)
m = ModelParams(mc, seed=seed)
opt = Adam(m.named_parameters(), lr=1e-3)
router = mct.LabelRouter(2, decay=0.98, slack=0.25, burn_in=600)
routes = {}
for step in range(1500):
    m.zero_grad()
    episodes, batches = [], []
    for g in range(4):
        ep, _ = src.sample_train(step*4+g)
        episodes.append(ep); batches.append(BatchedEpisode(ep, m, concepts=False))
    loss, routes, _ = mct.mct_label_routed_losses(batches, episodes, m, router)
    loss.backward(); opt.step()
frozen = m.frozen_copy()
print('routes:', {l: int(routes[l]) for l in sorted(routes)}, flush=True)

# fresh per-color cluster means from REPRESENTATIVE instances
rng = np.random.default_rng(9)
L1 = frozen.concept_maps[1].data
proto_from_clusters = {}
for c in range(6):
    imgs = np.stack([render_glyph(int(rng.integers(0,10)), BASE_COLORS[c], rng, 0.05)
                     for _ in range(60)])
    proto_from_clusters[c] = (frozen.embed_batch(imgs).data @ L1).mean(axis=0)

# episode-support centers (the trainer's source)
sums, counts = {}, {}
for t in range(150):
    ep, _ = src.sample_train(6000 + t)
    emb = frozen.embed_batch(ep.support_features()).data
    for i, inst in enumerate(ep.support):
        sums[inst.label] = sums.get(inst.label, 0.0) + emb[i]
        counts[inst.label] = counts.get(inst.label, 0) + 1
print('support counts per color label:', {l: counts.get(l,0) for l in range(10,16)}, flush=True)
P_support = {c: (sums[10+c]/counts[10+c]) @ L1 for c in range(6)}

A = np.stack([proto_from_clusters[c] for c in range(6)])
B = np.stack([P_support[c] for c in range(6)])
print('cos(cluster-proto, support-proto) matrix:\n', np.round(-neg_cos_matrix(A, B), 3), flush=True)
