"""Run configuration: INI-style sections of ``key = value`` lines.

Recognised sections and keys (all optional)::

    [run]        seed, figures, jobs
    [simulation] n_domains, n_per_domain, theta_scale, label_link, module_width
    [kernel]     bandwidth, ridge, max_rank, max_rank_z
    [graph]      alpha, max_cond, n_permutations, max_samples, change_alpha,
                 min_change_domains
    [train]      batch_size, svi_samples, epochs, learning_rate,
                 posterior_learning_rate, prediction_samples, synthetic_rows,
                 classifier_steps, hidden, temperature
    [evaluate]   replicates, graph

Unknown sections or keys are configuration errors.  Command-line flags
override values read from the file.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from augda.errors import ConfigError
from augda.generative import GeneratorConfig
from augda.graph import GraphConfig
from augda.inference import TrainConfig
from augda.kernels import KernelConfig


@dataclass
class RunSection:
    seed: int = 0
    figures: bool = False
    jobs: int = 1


@dataclass
class SimulationSection:
    n_domains: int = 2
    n_per_domain: int = 500
    theta_scale: float = 1.0
    label_link: str = "threshold"
    module_width: int = 32


@dataclass
class KernelSection:
    bandwidth: float | None = None
    ridge: float = 1e-3
    max_rank: int = 30
    max_rank_z: int = 100


@dataclass
class GraphSection:
    alpha: float = 0.05
    max_cond: int = 2
    n_permutations: int = 200
    max_samples: int = 2500
    change_alpha: float = 0.2
    min_change_domains: int = 4


@dataclass
class TrainSection:
    batch_size: int = 128
    svi_samples: int = 1
    epochs: int = TrainConfig.epochs
    learning_rate: float = TrainConfig.learning_rate
    posterior_learning_rate: float = TrainConfig.posterior_learning_rate
    prediction_samples: int = 20
    synthetic_rows: int = 2000
    classifier_steps: int = 500
    hidden: int = 32
    temperature: float = 0.5


@dataclass
class EvaluateSection:
    replicates: int = 10
    graph: str = "true"  # or "learned" (run the structure learner per replicate)


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    kernel: KernelSection = field(default_factory=KernelSection)
    graph: GraphSection = field(default_factory=GraphSection)
    train: TrainSection = field(default_factory=TrainSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    @property
    def seed(self):
        return self.run.seed

    def to_dict(self):
        return asdict(self)

    def kernel_config(self):
        k = self.kernel
        return KernelConfig(bandwidth=k.bandwidth, ridge=k.ridge, max_rank=k.max_rank,
                            max_rank_z=k.max_rank_z)

    def graph_config(self, seed=None):
        g = self.graph
        return GraphConfig(alpha=g.alpha, max_cond=g.max_cond, n_permutations=g.n_permutations,
                           max_samples=g.max_samples, change_alpha=g.change_alpha,
                           min_change_domains=g.min_change_domains,
                           seed=self.seed if seed is None else seed, kernel=self.kernel_config())

    def train_config(self, seed=None):
        t = self.train
        gen = GeneratorConfig(hidden=t.hidden, temperature=t.temperature,
                              seed=self.seed if seed is None else seed)
        return TrainConfig(batch_size=t.batch_size, svi_samples=t.svi_samples, epochs=t.epochs,
                           learning_rate=t.learning_rate,
                           posterior_learning_rate=t.posterior_learning_rate,
                           prediction_samples=t.prediction_samples,
                           synthetic_rows=t.synthetic_rows, classifier_steps=t.classifier_steps,
                           seed=self.seed if seed is None else seed, generator=gen)

    def validate(self):
        if self.evaluate.graph not in ("learned", "true"):
            raise ConfigError("evaluate.graph must be 'learned' or 'true'")
        if self.evaluate.replicates < 1:
            raise ConfigError("evaluate.replicates must be >= 1")
        if self.run.jobs < 1:
            raise ConfigError("run.jobs must be >= 1")
        if self.kernel.bandwidth is not None and self.kernel.bandwidth <= 0:
            raise ConfigError("kernel.bandwidth must be positive")
        # building the typed configs runs their own checks
        self.graph_config()
        self.train_config()
        return self


def _coerce(section, name, raw, ftype):
    text = raw.strip()
    try:
        if ftype in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if ftype in ("int", int):
            return int(text)
        if ftype in ("float", float):
            return float(text)
        if "None" in str(ftype):
            return None if text.lower() in ("", "none", "median") else float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"[{section}] {name}: cannot parse {raw!r}") from exc


def set_value(config: RunConfig, section: str, key: str, value):
    if section not in {f.name for f in fields(RunConfig)}:
        raise ConfigError(f"unknown config section [{section}]")
    sec = getattr(config, section)
    types = {f.name: f.type for f in fields(sec)}
    if key not in types:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    if isinstance(value, str):
        value = _coerce(section, key, value, types[key])
    setattr(sec, key, value)


def load_config(path=None, overrides=None) -> RunConfig:
    """Read ``path`` (if given) then apply ``overrides`` {(section, key): value}."""
    config = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                set_value(config, section, key, raw)
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            set_value(config, section, key, value)
    return config.validate()
