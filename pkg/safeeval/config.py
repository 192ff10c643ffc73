"""Experiment configuration: defaults, presets, JSON loading and validation."""

from dataclasses import asdict, dataclass, field, fields, replace
import json
from pathlib import Path
from typing import Any, Mapping

from safeeval.bootstrap import BootstrapConfig
from safeeval.errors import ConfigError
from safeeval.estimators import ESTIMATORS, EstimatorSettings
from safeeval.improve import ImproveConfig, METHODS
from safeeval.models import EnvConfig

GATE_ANY = "any"
OVERRIDE_KEYS = frozenset({"B", "method"})

DEFAULT_OVERRIDES: dict[str, dict[str, Any]] = {
    "wis": {"method": "bca"},
    "pdwis": {"method": "percentile"},
    "mb": {"method": "percentile"},
    "wdr": {"method": "percentile", "B": 224},
}


def _default_overrides() -> dict[str, dict[str, Any]]:
    return {name: dict(values) for name, values in DEFAULT_OVERRIDES.items()}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; defaults follow the full-scale protocol.

    Attributes:
        improve: Offline improvement settings.
        methods: Improvement methods to compare; empty means
            ``improve.method`` only.
        estimators: Estimators whose lower bounds are computed every iteration.
        bootstrap: Bootstrap settings shared by all estimators.
        bootstrap_overrides: Per-estimator ``B`` and ``method`` overrides.
        n_per_iteration: Trajectories collected per iteration.
        n_train: Trajectories of each collection used for improvement.
        max_iterations: Iteration cap per run.
        runs: Independent runs per experiment.
        base_seed: Root of every random stream of the experiment.
        env: Environment settings.
        output_dir: Directory receiving results and figures.
        gate: Estimator whose bound decides the safety test, or "any".
        continue_after_pass: Keep iterating after the safety test first passes.
        oracle: Compute the true-value diagnostic.
        oracle_episodes: Episodes per true-value diagnostic.
        mb_rollouts: Simulated trajectories per MB estimate.
        online_episodes: Online episodes used to train the behavior policy.
        refit_model_per_resample: Re-fit WDR's model inside every resample.
        bins_per_dim: Discretizer resolution used by the estimators.
        pib_alpha: Smoothing of the estimated behavior policy.
        jobs: Worker processes for independent runs.
    """

    improve: ImproveConfig = field(default_factory=ImproveConfig)
    methods: tuple[str, ...] = ()
    estimators: tuple[str, ...] = ("wis", "mb", "wdr")
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    bootstrap_overrides: Mapping[str, Mapping[str, Any]] = field(
        default_factory=_default_overrides
    )
    n_per_iteration: int = 300
    n_train: int = 20
    max_iterations: int = 10
    runs: int = 40
    base_seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    output_dir: str = "results"
    gate: str = "mb"
    continue_after_pass: bool = False
    oracle: bool = True
    oracle_episodes: int = 1000
    mb_rollouts: int = 10_000
    online_episodes: int = 150
    refit_model_per_resample: bool = True
    bins_per_dim: int = 32
    pib_alpha: float = 1.0
    jobs: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Check cross-field invariants.

        Raises:
            ConfigError: On the first violated invariant.
        """
        if self.n_per_iteration < 1:
            raise ConfigError("n_per_iteration must be positive")
        if not 0 <= self.n_train < self.n_per_iteration:
            raise ConfigError("n_train must be in [0, n_per_iteration)")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be positive")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.oracle_episodes < 1:
            raise ConfigError("oracle_episodes must be >= 1")
        if self.online_episodes < 0:
            raise ConfigError("online_episodes must be nonnegative")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators: {', '.join(sorted(unknown))}")
        unknown_methods = set(self.methods) - set(METHODS)
        if unknown_methods:
            raise ConfigError(f"unknown methods: {', '.join(sorted(unknown_methods))}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError("estimators must not repeat")
        if (
            self.estimators
            and self.gate != GATE_ANY
            and self.gate not in self.estimators
        ):
            raise ConfigError(f"gate {self.gate!r} is not a configured estimator")
        for name, values in self.bootstrap_overrides.items():
            if name not in ESTIMATORS:
                raise ConfigError(f"bootstrap override for unknown estimator {name!r}")
            extra = set(values) - OVERRIDE_KEYS
            if extra:
                raise ConfigError(f"unknown bootstrap override keys: {sorted(extra)}")
        for name in self.estimators:
            self.bootstrap_for(name)
        if self.mb_rollouts < 1:
            raise ConfigError("mb_rollouts must be >= 1")
        if self.pib_alpha <= 0:
            raise ConfigError("pib_alpha must be positive")

    @property
    def method_list(self) -> tuple[str, ...]:
        """Methods an experiment runs, in order."""
        return self.methods or (self.improve.method,)

    @property
    def n_test(self) -> int:
        """Trajectories of each collection held out for evaluation."""
        return self.n_per_iteration - self.n_train

    @property
    def estimator_settings(self) -> EstimatorSettings:
        """Settings of the estimation pipelines."""
        return EstimatorSettings(
            gamma=self.improve.gamma,
            bins_per_dim=self.bins_per_dim,
            alpha=self.pib_alpha,
            mb_rollouts=self.mb_rollouts,
            horizon=self.env.max_macro_steps,
            refit_model_per_resample=self.refit_model_per_resample,
        )

    def bootstrap_for(self, name: str) -> BootstrapConfig:
        """Bootstrap settings of one estimator after applying its override."""
        return replace(self.bootstrap, **dict(self.bootstrap_overrides.get(name, {})))


PRESETS: dict[str, dict[str, Any]] = {
    "paper": {
        "runs": 40,
        "bootstrap": {"B": 2000},
        "mb_rollouts": 10_000,
        "bootstrap_overrides": {"wdr": {"B": 224}},
    },
    "desk": {
        "runs": 10,
        "bootstrap": {"B": 500},
        "mb_rollouts": 1_000,
        "bootstrap_overrides": {"wdr": {"B": 224}},
    },
}


def _nested(cls: Any, base: Any, record: Any, where: str) -> Any:
    if not isinstance(record, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(record) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(sorted(unknown))}")
    values = dict(record)
    for key in ("start_position_range", "start_velocity_range"):
        if key in values:
            values[key] = tuple(values[key])
    try:
        return replace(base, **values)
    except TypeError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def _default_gate(gate: str, estimators: tuple[str, ...]) -> str:
    """Keep ``gate`` if it still applies, else gate on the first estimator."""
    if gate == GATE_ANY or gate in estimators:
        return gate
    return estimators[0] if estimators else GATE_ANY


def apply_overrides(
    cfg: ExperimentConfig, record: Mapping[str, Any]
) -> ExperimentConfig:
    """Return ``cfg`` updated by a (possibly partial) JSON-style mapping.

    Nested ``improve``, ``bootstrap`` and ``env`` objects update field by field;
    ``bootstrap_overrides`` merges per estimator. A new estimator list without
    a gate moves a gate it no longer contains to its first estimator.

    Raises:
        ConfigError: On unknown keys or invalid values.
    """
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(record) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    changes: dict[str, Any] = {}
    for key, value in record.items():
        if key == "improve":
            changes[key] = _nested(ImproveConfig, cfg.improve, value, key)
        elif key == "bootstrap":
            changes[key] = _nested(BootstrapConfig, cfg.bootstrap, value, key)
        elif key == "env":
            changes[key] = _nested(EnvConfig, cfg.env, value, key)
        elif key == "bootstrap_overrides":
            if not isinstance(value, dict):
                raise ConfigError("bootstrap_overrides must be a JSON object")
            merged = {name: dict(v) for name, v in cfg.bootstrap_overrides.items()}
            for name, override in value.items():
                if not isinstance(override, dict):
                    raise ConfigError(f"override for {name!r} must be an object")
                merged.setdefault(name, {}).update(override)
            changes[key] = merged
        elif key in ("estimators", "methods"):
            changes[key] = tuple(value)
        else:
            changes[key] = value
    if "estimators" in changes and "gate" not in changes:
        changes["gate"] = _default_gate(cfg.gate, changes["estimators"])
    try:
        return replace(cfg, **changes)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def apply_preset(cfg: ExperimentConfig, preset: str) -> ExperimentConfig:
    """Apply a named preset ("paper" or "desk")."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    return apply_overrides(cfg, PRESETS[preset])


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a JSON file mirroring :class:`ExperimentConfig`.

    Raises:
        ConfigError: If the file is unreadable, not JSON, or invalid.
    """
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in config {path}: {exc}") from exc
    if not isinstance(record, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return apply_overrides(ExperimentConfig(), record)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """Plain JSON-ready mapping; :func:`apply_overrides` reads it back."""
    record = asdict(cfg)
    record["estimators"] = list(cfg.estimators)
    record["methods"] = list(cfg.methods)
    record["bootstrap_overrides"] = {
        name: dict(values) for name, values in cfg.bootstrap_overrides.items()
    }
    return record


def format_config(cfg: ExperimentConfig) -> str:
    """config.json text: sorted keys, two-space indent."""
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
