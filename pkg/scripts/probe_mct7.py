import time
import numpy as np
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, make_mct_testset
from conceptmeta.posterior import BatchedEpisode
from conceptmeta.trainer import Adam
from conceptmeta import mct
from conceptmeta.evaluation import per_concept_accuracy

def run(burn_in, eps, group=4, lr=1e-3, seed=0, fresh_centers=True):
    src = GlyphSource('mct-mixed', n_way=5, k_shot=1, query_per_class=3, seed=seed)
    mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                     mode='mct', task='classification', label_dim=5)
    m = ModelParams(mc, seed=seed)
    opt = Adam(m.named_parameters(), lr=lr)
    router = mct.LabelRouter(2, decay=0.98, slack=0.25, burn_in=burn_in)
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
    if fresh_centers:
        frozen = m.frozen_copy()
        sums, counts = {}, {}
        for t in range(150):
            ep, _ = src.sample_train(eps + t)
            emb = frozen.embed_batch(ep.support_features()).data
            for i, inst in enumerate(ep.support):
                sums[inst.label] = sums.get(inst.label, 0.0) + emb[i]
                counts[inst.label] = counts.get(inst.label, 0) + 1
        centers = {l: sums[l] / counts[l] for l in sums}
    mct.materialize_prototypes(m, centers, routes)
    feats, labels = make_mct_testset(1200, seed)
    res = per_concept_accuracy(m, feats, labels)
    sr = [int(routes.get(l,-1)) for l in range(10)]
    cr = [int(routes.get(l,-1)) for l in range(10,16)]
    print('burn=%d eps=%d fresh=%s: routes S=%s C=%s acc=%s (%.0f s)'
          % (burn_in, eps, fresh_centers, sr, cr, np.round(res['accuracies'],4),
             time.time()-t0), flush=True)

run(600, 6000, fresh_centers=True)
run(600, 12000, fresh_centers=True)
