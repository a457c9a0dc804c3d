import numpy as np
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, render_glyph, BASE_COLORS
from conceptmeta.posterior import BatchedEpisode
from conceptmeta.trainer import Adam
from conceptmeta import mct
from conceptmeta.sct import neg_cos_matrix

def proto_cos(n_way, q, eps, burn=600, lr=1e-3, seed=0):
    src = GlyphSource('mct-mixed', n_way=n_way, k_shot=1, query_per_class=q, seed=seed)
    mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                     mode='mct', task='classification', label_dim=n_way)
    m = ModelParams(mc, seed=seed)
    opt = Adam(m.named_parameters(), lr=lr)
    router = mct.LabelRouter(2, decay=0.98, slack=0.25, burn_in=burn)
    routes = {}
    for step in range(eps // 4):
        m.zero_grad()
        episodes, batches = [], []
        for g in range(4):
            ep, _ = src.sample_train(step*4+g)
            episodes.append(ep); batches.append(BatchedEpisode(ep, m, concepts=False))
        loss, routes, _ = mct.mct_label_routed_losses(batches, episodes, m, router)
        loss.backward(); opt.step()
    frozen = m.frozen_copy()
    rng = np.random.default_rng(9)
    L1 = frozen.concept_maps[1].data
    rows = []
    for c in range(6):
        imgs = np.stack([render_glyph(int(rng.integers(0,10)), BASE_COLORS[c], rng, 0.05)
                         for _ in range(50)])
        rows.append((frozen.embed_batch(imgs).data @ L1).mean(axis=0))
    A = np.stack(rows)
    print('N=%d color-cluster cosines:\n%s' % (n_way, np.round(-neg_cos_matrix(A, A), 2)),
          flush=True)

proto_cos(8, 2, 8000)
