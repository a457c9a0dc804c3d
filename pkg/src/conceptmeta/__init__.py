"""Meta-learning with latent concept decomposition.

The package builds context-aware few-shot models: instance embeddings are
decomposed into several learned concept spaces, and selector networks route
each task (or each instance) to the concepts that explain its labels.
Everything runs on a small self-contained reverse-mode autodiff engine and
synthetic, fully seeded task generators.
"""

from .autodiff import Tensor, parameter
from .config import ExperimentConfig, load_config, parse_config_text
from .episodes import Episode, EpisodeMeta, Instance
from .model import ModelConfig, ModelParams, count_parameters
from .posterior import ConceptPosterior, multi_concept_posterior, proto_posterior
from .sct import mine_triplets, sct_posterior, task_concept_prob
from .mct import (comparison_mask, deploy_predict, instance_concept_prob,
                  mct_posterior)
from .trainer import Adam, TrainReport, meta_train, regularizer_omega

__version__ = "0.1.0"

__all__ = [
    "Adam", "ConceptPosterior", "Episode", "EpisodeMeta", "ExperimentConfig",
    "Instance", "ModelConfig", "ModelParams", "Tensor", "TrainReport",
    "comparison_mask", "count_parameters", "deploy_predict",
    "instance_concept_prob", "load_config", "mct_posterior", "meta_train",
    "mine_triplets", "multi_concept_posterior", "parameter",
    "parse_config_text", "proto_posterior", "regularizer_omega",
    "sct_posterior", "task_concept_prob",
]
