import time
import numpy as np
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource, make_mct_testset
from conceptmeta.posterior import BatchedEpisode
from conceptmeta.trainer import Adam
from conceptmeta import mct
from conceptmeta.evaluation import per_concept_accuracy

def run(n_way, q, eps, burn=600, group=4, lr=1e-3, seed=0):
    src = GlyphSource('mct-mixed', n_way=n_way, k_shot=1, query_per_class=q, seed=seed)
    mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                     mode='mct', task='classification', label_dim=n_way)
    m = ModelParams(mc, seed=seed)
    opt = Adam(m.named_parameters(), lr=lr)
    router = mct.LabelRouter(2, decay=0.98, slack=0.25, burn_in=burn)
    routes = {}
    t0 = time.time()
    for step in range(eps // group):
        m.zero_grad()
        episodes, batches = [], []
        for g in range(group):
            ep, _ = src.sample_train(step*group+g)
            episodes.append(ep); batches.append(BatchedEpisode(ep, m, concepts=False))
        loss, routes, _ = mct.mct_label_routed_losses(batches, episodes, m, router)
        loss.backward(); opt.step()
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
    ok_routes = all(routes.get(l) == routes.get(10) for l in range(10,16)) and \
                all(routes.get(l) == routes.get(0) for l in range(10))
    print('N=%d q=%d eps=%d: clean_routes=%s acc=%s (%.0f s)'
          % (n_way, q, eps, ok_routes, np.round(res['accuracies'],4), time.time()-t0),
          flush=True)

run(5, 3, 8000)
run(5, 3, 12000)
