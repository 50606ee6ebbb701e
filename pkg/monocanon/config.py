"""Run configuration: strict JSON sections with dotted overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from .const import (
    _LOGGER,
    DEFAULT_CONCENTRATION,
    DEFAULT_GRID_SIZE,
    DEFAULT_LOSS_WEIGHT,
    DEFAULT_MIN_SEGMENT,
    DEFAULT_N_WARPS,
    DEFAULT_SCALE_BUCKETS,
    DEFAULT_SPREAD,
)
from .datagen.const import DEFAULT_CANVAS, DEFAULT_DIGITS, DEFAULT_SCALE_RANGE, DEFAULT_TEST, DEFAULT_TRAIN
from .dec.const import DEFAULT_BETA, DEFAULT_MAX_ITERS, DEFAULT_TOL, DEFAULT_UNROLL_STEPS, DEFAULT_WINDOW
from .exceptions import ConfigError
from .nn.const import TOY_CHANNELS


@dataclass(frozen=True)
class DataSection:
    """Dataset manifest parameters; ``source`` "auto" uses MNIST when its files are found."""

    n_train: int = DEFAULT_TRAIN
    n_test: int = DEFAULT_TEST
    canvas: int = DEFAULT_CANVAS
    digits: int = DEFAULT_DIGITS
    scale_range: tuple = DEFAULT_SCALE_RANGE
    seed: int = 0
    source: str = "auto"
    mnist_dir: Optional[str] = None
    variants: int = 0
    concentration: float = DEFAULT_CONCENTRATION
    spread: float = DEFAULT_SPREAD


@dataclass(frozen=True)
class ModelSection:
    """Toy classifier and adapter placement."""

    channels: tuple = TOY_CHANNELS
    canonicalizer: str = "dec"
    placements: Optional[int] = None
    shared: bool = False
    grid_size: int = DEFAULT_GRID_SIZE
    min_segment: float = DEFAULT_MIN_SEGMENT
    dec_channels: Optional[tuple] = None


@dataclass(frozen=True)
class DecSection:
    """Anderson solver and backward mode."""

    window: int = DEFAULT_WINDOW
    beta: float = DEFAULT_BETA
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    verbose: bool = False
    backward: str = "phantom"
    unroll_steps: int = DEFAULT_UNROLL_STEPS


@dataclass(frozen=True)
class TrainSection:
    """Optimization; ``kind`` selects the comparison method trained by ``train``."""

    kind: str = "augmented"
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 5
    optimizer: str = "adam"
    seed: int = 0
    loss_weight: float = DEFAULT_LOSS_WEIGHT
    aux_samples: int = 1
    freeze_canonicalizer: bool = False
    sweep: bool = False


@dataclass(frozen=True)
class EvalSection:
    """Metric seeds and sizes."""

    seed: int = 0
    n_warps: int = DEFAULT_N_WARPS
    buckets: tuple = DEFAULT_SCALE_BUCKETS
    limit: Optional[int] = None
    batch_size: int = 64
    probe: bool = False


@dataclass(frozen=True)
class BenchSection:
    """DEC against unrolled gradient descent at equal batch."""

    batch_size: int = 8
    size: int = 32
    gd_steps: int = 10
    gd_lr: float = 0.1
    repeats: int = 1
    seed: int = 0


@dataclass(frozen=True)
class ChecksSection:
    """Property suite sizes."""

    grid_sizes: tuple = (2, 4, 8, 16)
    triples: int = 1000
    seed: int = 0
    claim_seeds: int = 20
    claim_size: int = 16
    claim_grid: int = 2


@dataclass(frozen=True)
class PathsSection:
    """Inputs, resolved against the config file's directory."""

    data: Optional[str] = None
    checkpoint: Optional[str] = None
    augmented: Optional[str] = None


SECTIONS = {
    "data": DataSection,
    "model": ModelSection,
    "dec": DecSection,
    "train": TrainSection,
    "eval": EvalSection,
    "bench": BenchSection,
    "checks": ChecksSection,
    "paths": PathsSection,
}


def _freeze(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def _thaw(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    if isinstance(value, dict):
        return {k: _thaw(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of one command."""

    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    dec: DecSection = field(default_factory=DecSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    bench: BenchSection = field(default_factory=BenchSection)
    checks: ChecksSection = field(default_factory=ChecksSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Union[str, Path] = None) -> 'RunConfig':
        """Builds a config, rejecting every unknown key at once."""
        if not isinstance(raw, dict):
            raise ConfigError([], "config must be a JSON object")
        unknown = [name for name in raw if name not in SECTIONS]
        sections = {}
        for name, section in SECTIONS.items():
            values = raw.get(name, {})
            if not isinstance(values, dict):
                unknown.append(name)
                continue
            names = {f.name for f in fields(section)}
            unknown += [f"{name}.{key}" for key in values if key not in names]
            try:
                sections[name] = section(**{k: _freeze(v) for k, v in values.items() if k in names})
            except (TypeError, ValueError) as exc:
                raise ConfigError([name], str(exc)) from exc
        if unknown:
            raise ConfigError(sorted(unknown), "unknown configuration keys")
        config = cls(**sections)
        return config.resolve(base_dir) if base_dir is not None else config

    @classmethod
    def load(cls, path: Union[str, Path, None], overrides: Sequence[str] = ()) -> 'RunConfig':
        """Reads a JSON config file (or defaults) and applies ``key.path=value`` overrides."""
        raw: dict = {}
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                raw = json.loads(path.read_text())
            except FileNotFoundError as exc:
                raise ConfigError([str(path)], "config file not found") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError([str(path)], f"invalid JSON: {exc}") from exc
            base = path.parent
        for override in overrides:
            apply_override(raw, override)
        return cls.from_dict(raw, base)

    def resolve(self, base_dir: Union[str, Path]) -> 'RunConfig':
        """Makes relative input paths absolute against ``base_dir``."""
        base = Path(base_dir)

        def absolute(value: Optional[str]) -> Optional[str]:
            return None if value is None else str((base / value).resolve())

        paths = PathsSection(**{k: absolute(v) for k, v in asdict(self.paths).items()})
        data = DataSection(**{**asdict(self.data), "mnist_dir": absolute(self.data.mnist_dir)})
        return RunConfig(data, self.model, self.dec, self.train, self.eval, self.bench, self.checks, paths)

    def with_seed(self, seed: int) -> 'RunConfig':
        """Overrides the data, train and eval seeds."""
        return RunConfig(
            DataSection(**{**asdict(self.data), "seed": seed}),
            self.model,
            self.dec,
            TrainSection(**{**asdict(self.train), "seed": seed}),
            EvalSection(**{**asdict(self.eval), "seed": seed}),
            self.bench,
            self.checks,
            self.paths,
        )

    def to_dict(self) -> dict:
        """JSON form with lists in place of tuples."""
        return _thaw(asdict(self))

    def write(self, directory: Union[str, Path]) -> Path:
        """Echoes the effective config as ``config.json``."""
        target = Path(directory) / "config.json"
        target.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return target


def parse_value(text: str) -> Any:
    """JSON when it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, override: str) -> None:
    """Sets ``a.b=value`` in a nested dict."""
    key, sep, text = override.partition("=")
    if not sep or not key:
        raise ConfigError([override], "overrides look like section.key=value")
    *parents, leaf = key.split(".")
    node = raw
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError([key], "override path crosses a non-object value")
    node[leaf] = parse_value(text)
    _LOGGER.debug("Override %s=%s", key, node[leaf])
