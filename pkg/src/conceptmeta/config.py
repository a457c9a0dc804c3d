"""Experiment configuration: a line-oriented ``key = value`` format with
``[section]`` headers, validated up front with every problem reported in one
aggregated error. The canonical serialization (sorted ``section.key = value``
lines) is hashed and stamped into every output file and checkpoint.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .exceptions import ConfigError
from .model import ModelConfig

EXPERIMENTS = ("confusing-regression", "family-regression",
               "glyph-sct", "glyph-mct", "glyph-ood")
MODES = ("SCT", "MCT", "baseline")

GLYPH_INPUT_DIM = 16 * 16 * 3


@dataclass
class ExperimentConfig:
    experiment: str = ""
    mode: str = ""
    seed: int = -1
    out_dir: str = "runs"

    # model
    n_concepts: int = 2
    embed_dim: int = 32
    concept_dim: int = 0          # 0 -> same as embed_dim
    phi_hidden: tuple = (128, 128)
    head_hidden: int = 0          # 0 -> embed_dim // 2

    # episodes
    n_way: int = 5
    k_shot: int = 1
    query_per_class: int = 3
    query_size: int = 100         # regression query count
    batch_size: int = 128         # confusing-regression points per step

    # training
    episodes: int = 5000
    episodes_per_step: int = 1
    learning_rate: float = 1e-3
    omega_form: str = "entropy"
    omega_lambda: float = 0.01
    selector: str = "learned"     # 'uniform' removes disambiguation
    warmup_points: int = 50
    warmup_steps: int = 2000
    val_interval: int = 500
    val_episodes: int = 20
    checkpoint_interval: int = 0
    triplet_cap: int = 64

    # glyph data
    draw_plan: str = "none"
    color_noise_std: float = 0.0
    pixel_noise_std: float = 0.05
    jitter: int = 0
    mask_dropout: float = 0.0

    # evaluation
    trials: int = 1000

    def validate(self):
        problems = []
        if self.experiment not in EXPERIMENTS:
            problems.append(f"experiment.name: must be one of {EXPERIMENTS}, "
                            f"got {self.experiment!r}")
        if self.mode not in MODES:
            problems.append(f"experiment.mode: must be one of {MODES}, got {self.mode!r}")
        if self.seed < 0:
            problems.append("experiment.seed: required, must be a non-negative integer")
        for name, value in (("model.concepts", self.n_concepts),
                            ("model.embed_dim", self.embed_dim),
                            ("episode.n_way", self.n_way),
                            ("episode.k_shot", self.k_shot),
                            ("episode.query_per_class", self.query_per_class),
                            ("episode.query_size", self.query_size),
                            ("train.episodes", self.episodes),
                            ("train.batch_size", self.batch_size)):
            if value < 1:
                problems.append(f"{name}: must be >= 1, got {value}")
        if self.learning_rate <= 0:
            problems.append(f"train.learning_rate: must be > 0, got {self.learning_rate}")
        if self.omega_form not in ("none", "entropy"):
            problems.append(f"train.omega: must be 'none' or 'entropy', got {self.omega_form!r}")
        if self.omega_lambda < 0:
            problems.append(f"train.omega_lambda: must be >= 0, got {self.omega_lambda}")
        if self.selector not in ("learned", "uniform"):
            problems.append(f"train.selector: must be 'learned' or 'uniform', "
                            f"got {self.selector!r}")
        if self.experiment == "glyph-ood":
            if self.draw_plan not in ("DrawClass", "DrawTask"):
                problems.append("data.draw_plan: glyph-ood requires DrawClass or DrawTask, "
                                f"got {self.draw_plan!r}")
        elif self.draw_plan not in ("none", ""):
            problems.append(f"data.draw_plan: only glyph-ood uses a draw plan, "
                            f"got {self.draw_plan!r}")
        if self.color_noise_std < 0 or self.pixel_noise_std < 0:
            problems.append("data noise stds must be >= 0")
        if self.jitter < 0 or not 0 <= self.mask_dropout < 1:
            problems.append("data.jitter must be >= 0 and data.mask_dropout in [0, 1)")
        if self.trials < 2:
            problems.append(f"eval.trials: must be >= 2, got {self.trials}")
        if self.experiment == "confusing-regression" and self.mode == "SCT":
            problems.append("experiment.mode: confusing-regression trains in MCT "
                            "(or baseline) mode")
        if self.experiment == "glyph-mct" and self.mode == "SCT":
            problems.append("experiment.mode: glyph-mct trains in MCT (or baseline) mode")
        if problems:
            raise ConfigError(problems)
        return self

    # -- derived ----------------------------------------------------------

    @property
    def is_regression(self):
        return self.experiment in ("confusing-regression", "family-regression")

    @property
    def input_dim(self):
        return 1 if self.is_regression else GLYPH_INPUT_DIM

    @property
    def effective_mode(self):
        """Lowercase mode the trainer and model run in.

        Regression experiments keep the concept machinery even for the
        baseline: the single-embedding comparison point is the same
        architecture with one concept, so 'baseline' maps to a one-concept
        sct/mct model there.
        """
        mode = self.mode.lower()
        if self.is_regression:
            return "mct" if self.experiment == "confusing-regression" else "sct"
        return mode

    def model_config(self) -> ModelConfig:
        mode = self.effective_mode
        n_concepts = 1 if self.mode.lower() == "baseline" else self.n_concepts
        task = "regression" if self.is_regression else "classification"
        return ModelConfig(
            input_dim=self.input_dim,
            embed_dim=self.embed_dim,
            n_concepts=n_concepts,
            concept_dim=self.concept_dim or None,
            phi_hidden=tuple(self.phi_hidden),
            head_hidden=self.head_hidden or None,
            mode=mode,
            task=task,
            label_dim=(self.n_way if task == "classification" else 1),
            support_size=self.k_shot,
        )

    def canonical_text(self):
        pairs = []
        for section, key, attr in _FIELD_MAP:
            value = getattr(self, attr)
            if attr == "phi_hidden":
                value = ",".join(str(v) for v in value)
            pairs.append(f"{section}.{key} = {value}")
        return "\n".join(sorted(pairs)) + "\n"

    def config_hash(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]


# (section, key-in-file, attribute)
_FIELD_MAP = [
    ("experiment", "name", "experiment"),
    ("experiment", "mode", "mode"),
    ("experiment", "seed", "seed"),
    ("experiment", "out", "out_dir"),
    ("model", "concepts", "n_concepts"),
    ("model", "embed_dim", "embed_dim"),
    ("model", "concept_dim", "concept_dim"),
    ("model", "phi_hidden", "phi_hidden"),
    ("model", "head_hidden", "head_hidden"),
    ("episode", "n_way", "n_way"),
    ("episode", "k_shot", "k_shot"),
    ("episode", "query_per_class", "query_per_class"),
    ("episode", "query_size", "query_size"),
    ("train", "episodes", "episodes"),
    ("train", "episodes_per_step", "episodes_per_step"),
    ("train", "batch_size", "batch_size"),
    ("train", "learning_rate", "learning_rate"),
    ("train", "omega", "omega_form"),
    ("train", "omega_lambda", "omega_lambda"),
    ("train", "selector", "selector"),
    ("train", "warmup_points", "warmup_points"),
    ("train", "warmup_steps", "warmup_steps"),
    ("train", "val_interval", "val_interval"),
    ("train", "val_episodes", "val_episodes"),
    ("train", "checkpoint_interval", "checkpoint_interval"),
    ("train", "triplet_cap", "triplet_cap"),
    ("data", "draw_plan", "draw_plan"),
    ("data", "color_noise_std", "color_noise_std"),
    ("data", "pixel_noise_std", "pixel_noise_std"),
    ("data", "jitter", "jitter"),
    ("data", "mask_dropout", "mask_dropout"),
    ("eval", "trials", "trials"),
]

_BY_DOTTED = {f"{s}.{k}": attr for s, k, attr in _FIELD_MAP}

_REQUIRED = ("experiment.name", "experiment.mode", "experiment.seed")


def _convert(attr, raw, problems, dotted):
    kind = {f.name: f.type for f in fields(ExperimentConfig)}[attr]
    try:
        if attr == "phi_hidden":
            return tuple(int(v) for v in raw.split(",") if v.strip() != "")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        problems.append(f"{dotted}: cannot parse {raw!r}")
        return None


def parse_config_text(text) -> ExperimentConfig:
    cfg = ExperimentConfig()
    problems = []
    seen = set()
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        dotted = key if (not section and "." in key) else f"{section}.{key}"
        attr = _BY_DOTTED.get(dotted)
        if attr is None:
            problems.append(f"{dotted}: unknown configuration key")
            continue
        value = _convert(attr, raw, problems, dotted)
        if value is not None:
            setattr(cfg, attr, value)
            seen.add(dotted)
    for dotted in _REQUIRED:
        if dotted not in seen:
            problems.append(f"{dotted}: required field is missing")
    if problems:
        raise ConfigError(problems)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())
