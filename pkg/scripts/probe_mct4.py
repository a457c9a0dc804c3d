import time
import numpy as np
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, make_mct_testset
from conceptmeta.posterior import BatchedEpisode
from conceptmeta.trainer import Adam
from conceptmeta import mct
from conceptmeta.evaluation import per_concept_accuracy

def run(slack, decay, eps=6000, group=4, lr=1e-3, seed=0):
    src = GlyphSource('mct-mixed', n_way=5, k_shot=1, query_per_class=3, seed=seed)
    mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                     mode='mct', task='classification', label_dim=5)
    m = ModelParams(mc, seed=seed)
    opt = Adam(m.named_parameters(), lr=lr)
    router = mct.LabelRouter(2, decay=decay, slack=slack)
    centers, routes = {}, {}
    t0 = time.time()
    for step in range(eps // group):
        m.zero_grad()
        episodes, batches = [], []
        for g in range(group):
            ep, _ = src.sample_train(step*group+g)
            episodes.append(ep); batches.append(BatchedEpisode(ep, m, concepts=False))
        loss, routes, _ = mct.mct_label_routed_losses(batches, episodes, m, router)
        loss.backward(); opt.step()
        for batch in batches:
            emb = batch.emb_s.data
            for lab in batch.classes:
                mem = [i for i,l in enumerate(batch.labels) if l==lab]
                c = emb[mem].mean(axis=0)
                centers[lab] = c if lab not in centers else 0.99*centers[lab]+0.01*c
        if (step+1) % 375 == 0:
            shape_r = [routes.get(l,-1) for l in range(10)]
            color_r = [routes.get(l,-1) for l in range(10,16)]
            print('  step %d: shapes=%s colors=%s' % (step+1, shape_r, color_r), flush=True)
    mct.materialize_prototypes(m, centers, routes)
    feats, labels = make_mct_testset(1200, seed)
    res = per_concept_accuracy(m, feats, labels)
    print('slack=%.2f decay=%.2f: acc=%s (%.0f s)' % (slack, decay,
          np.round(res['accuracies'],4), time.time()-t0), flush=True)

run(0.25, 0.9)
run(0.25, 0.98)
