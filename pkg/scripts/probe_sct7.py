import time
import numpy as np
from conceptmeta.model import ModelConfig, ModelParams
from conceptmeta.taskgen import GlyphSource
from conceptmeta.evaluation import accuracy_over_trials, concept_id_rate
from conceptmeta import sct, autodiff as ad
from conceptmeta.autodiff import Tensor
from conceptmeta.posterior import BatchedEpisode
from conceptmeta.trainer import Adam, meta_train
from types import SimpleNamespace

def run(total_eps, group, lr, seed=0):
    src = GlyphSource('sct-attr', n_way=5, k_shot=1, query_per_class=3, seed=seed)
    mc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=2, phi_hidden=(128,128),
                     mode='sct', task='classification', label_dim=5)
    m = ModelParams(mc, seed=seed)
    m.head[1][0].data[:] = 0.0
    m.head[1][1].data[:] = 0.0
    opt = Adam(m.named_parameters(), lr=lr)
    t0 = time.time()
    for step in range(total_eps // group):
        m.zero_grad()
        ups, nllrows = [], []
        for g in range(group):
            ep, meta = src.sample_train(step*group+g)
            b = BatchedEpisode(ep, m, concepts=True, detach_kappa=True)
            ups.append(sct.task_concept_prob(ep, m))
            nllrows.append(sct.sct_per_concept_nlls(b))
        routing = sct.balanced_assignment([[t.item() for t in r] for r in nllrows])
        fit = [nllrows[b][routing[b]] for b in range(group)]
        dis = [ad.neg(ad.log(ad.index(ups[b], int(routing[b])))) for b in range(group)]
        loss = ad.add(ad.tmean(ad.stack(fit)), ad.mul(Tensor(0.1), ad.tmean(ad.stack(dis))))
        loss.backward(); opt.step()
    rate = concept_id_rate(m, src, 500)
    acc, ci = accuracy_over_trials(m, src, 1000, 'sct')
    print('eps=%d group=%d lr=%g: id_rate=%.3f acc=%.4f+-%.4f (%.0f s)'
          % (total_eps, group, lr, rate, acc, ci, time.time()-t0), flush=True)

run(10000, 10, 1e-3)
run(10000, 10, 2e-3)

# baseline at matched budget
def settings(mode, episodes, seed=0):
    return SimpleNamespace(experiment='glyph-sct', mode=mode, seed=seed,
        episodes=episodes, episodes_per_step=1, learning_rate=1e-3,
        omega_form='none', omega_lambda=0.0, selector='learned',
        warmup_points=0, warmup_steps=0, val_interval=0, val_episodes=0,
        checkpoint_interval=0, config_hash='x')
src = GlyphSource('sct-attr', n_way=5, k_shot=1, query_per_class=3, seed=0)
bc = ModelConfig(input_dim=768, embed_dim=32, n_concepts=1, phi_hidden=(128,128),
                 mode='baseline', task='classification', label_dim=5)
b = ModelParams(bc, seed=0)
t0 = time.time()
meta_train(settings('baseline', 10000), b, src)
bacc, bci = accuracy_over_trials(b, src, 1000, 'baseline')
print('baseline eps=10000: acc=%.4f+-%.4f (%.0f s)' % (bacc, bci, time.time()-t0), flush=True)
