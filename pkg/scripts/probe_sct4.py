import time
import numpy as np
from types import SimpleNamespace
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource
from conceptmeta.evaluation import accuracy_over_trials, concept_id_rate
from conceptmeta import sct, autodiff as ad
from conceptmeta.autodiff import Tensor
from conceptmeta.posterior import BatchedEpisode
from conceptmeta.trainer import Adam

def run(oracle_steps, total_eps=6000, group=6, lr=1e-3):
    src = GlyphSource('sct-attr', n_way=5, k_shot=1, query_per_class=3, seed=0)
    mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                     mode='sct', task='classification', label_dim=5)
    m = ModelParams(mc, seed=0)
    opt = Adam(m.named_parameters(), lr=lr)
    steps = total_eps // group
    t0 = time.time()
    for step in range(steps):
        m.zero_grad()
        batches, ups, nllrows, truths = [], [], [], []
        for g in range(group):
            ep, meta = src.sample_train(step*group+g)
            b = BatchedEpisode(ep, m, concepts=True)
            batches.append(b); truths.append(meta.concept_id)
            ups.append(sct.task_concept_prob(ep, m))
            nllrows.append(sct.sct_per_concept_nlls(b))
        if step*group < oracle_steps:
            routing = np.asarray(truths)
        else:
            routing = sct.balanced_assignment([[t.item() for t in r] for r in nllrows])
        fit = [nllrows[b][routing[b]] for b in range(group)]
        dis = [ad.neg(ad.log(ad.index(ups[b], int(routing[b])))) for b in range(group)]
        loss = ad.add(ad.tmean(ad.stack(fit)), ad.mul(Tensor(0.1), ad.tmean(ad.stack(dis))))
        loss.backward(); opt.step()
    rate = concept_id_rate(m, src, 400)
    acc, ci = accuracy_over_trials(m, src, 800, 'sct')
    print('oracle_steps=%d: id_rate=%.3f acc=%.4f+-%.4f (%.0f s)'
          % (oracle_steps, rate, acc, ci, time.time()-t0), flush=True)

run(6000)    # full oracle routing: ceiling
run(1200)    # oracle seeding then margin-EM
