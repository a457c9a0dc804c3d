"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of the operands do not fit the operation."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input (zero-norm vector, non-positive log)."""


class GraphError(RuntimeError):
    """Misuse of the differentiation graph (e.g. backward on a non-scalar)."""


class ModeError(RuntimeError):
    """Operation called on a model configured for a different task or mode."""


class EpisodeStructureError(ValueError):
    """Episode violates the N-way/K-shot contract the operation relies on."""


class ConfigError(ValueError):
    """One or more invalid configuration fields, reported together."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(
            f"  - {p}" for p in self.problems))


class UnsupportedSizeError(ValueError):
    """Problem size exceeds what the exhaustive algorithm supports."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the episode seed for reproduction."""

    def __init__(self, episode_seed, message=""):
        self.episode_seed = episode_seed
        super().__init__(
            f"non-finite loss at episode seed {episode_seed}" +
            (f": {message}" if message else ""))


class CheckpointError(ValueError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a checkpoint (bad magic or malformed layout)."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointCorruptionError(CheckpointError):
    """Checksum mismatch: the file is truncated or corrupted."""
