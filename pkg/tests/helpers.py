"""Shared test utilities: the central finite-difference oracle and small
builders for hand-constructed models and episodes."""

import numpy as np

from conceptmeta.episodes import Episode, Instance
from conceptmeta.model import ModelConfig, ModelParams

FD_STEP = 1e-5


def finite_difference(f, arrays, step=FD_STEP):
    """Central finite differences of scalar ``f`` w.r.t. every array entry."""
    grads = [np.zeros_like(a) for a in arrays]
    for k, a in enumerate(arrays):
        flat = a.reshape(-1)
        gf = grads[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(arrays)
            flat[i] = orig - step
            lo = f(arrays)
            flat[i] = orig
            gf[i] = (hi - lo) / (2.0 * step)
    return grads


def grads_close(analytic, fd, rtol=1e-4, atol=1e-6):
    return np.allclose(analytic, fd, rtol=rtol, atol=atol)


def model_grad_matches_fd(m, loss_fn, rtol=1e-4, atol=1e-6):
    """Check every parameter gradient of ``loss_fn(m)`` against the oracle."""
    params = m.named_parameters()
    m.zero_grad()
    loss_fn(m).backward()
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            hi = loss_fn(m).item()
            flat[i] = orig - FD_STEP
            lo = loss_fn(m).item()
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * FD_STEP)
        if not np.allclose(analytic.reshape(-1), fd, rtol=rtol, atol=atol):
            return name
    return None


def identity_model(dim=2, n_concepts=2, mode="sct", task="classification",
                   label_dim=2, support_size=2, seed=0):
    """Identity embedding model with near-identity concept maps."""
    cfg = ModelConfig(input_dim=dim, embed_dim=dim, n_concepts=n_concepts,
                      phi_identity=True, mode=mode, task=task,
                      label_dim=label_dim, support_size=support_size)
    return ModelParams(cfg, seed=seed)


def small_classification_episode(n_way=2, k_shot=1, queries=2, dim=4, seed=0,
                                 mode="sct"):
    rng = np.random.default_rng(seed)
    support, query = [], []
    for label in range(n_way):
        center = rng.normal(scale=2.0, size=dim)
        for _ in range(k_shot):
            support.append(Instance(x=center + rng.normal(scale=0.3, size=dim),
                                    label=label))
    for _ in range(queries):
        label = int(rng.integers(0, n_way))
        base = next(inst.x for inst in support if inst.label == label)
        query.append(Instance(x=base + rng.normal(scale=0.3, size=dim), label=label))
    return Episode(support=support, query=query, n_way=n_way, k_shot=k_shot,
                   task="classification", mode=mode, seed=seed)
