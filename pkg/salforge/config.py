import dataclasses
import typing

import yaml

from salforge.nn.params import Architecture, InitScheme


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class DataConfig:
    n_input: int = 16384
    n_near: int = 8192
    n_uniform: int = 4096
    sigma_small: float = 0.01
    sigma_large: float = 0.1
    bound: float = 1.1
    test_fraction: float = 0.0

    def validate(self):
        _positive(self, 'n_input', 'bound')
        _non_negative(self, 'n_near', 'n_uniform', 'sigma_small', 'sigma_large')
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError(f'data.test_fraction must be in [0, 1), got {self.test_fraction}')


@dataclasses.dataclass
class ModelConfig:
    arch: str = Architecture.LIGHTSAL.value
    init: str = InitScheme.SCALED_UNIFORM.value
    sphere_radius: float = 1.0

    def validate(self):
        _positive(self, 'sphere_radius')
        if self.arch not in Architecture.values:
            raise ConfigError(f'model.arch must be one of {Architecture.values}, got {self.arch!r}')
        if self.init not in InitScheme.values:
            raise ConfigError(f'model.init must be one of {InitScheme.values}, got {self.init!r}')


@dataclasses.dataclass
class TrainSettings:
    lr0: float = 0.0005
    batch_size: int = 16
    points_per_shape: int = 2048
    input_points: int = 16384
    epochs: int = 500
    schedule_period: int = 200
    schedule_factor: float = 0.5
    kl_weight: float = 0.001
    checkpoint_every: int = 50
    decoder_only: bool = False
    seed: int = 0

    def validate(self):
        _positive(self, 'lr0', 'batch_size', 'points_per_shape', 'input_points', 'epochs',
                  'schedule_period', 'checkpoint_every')
        _non_negative(self, 'kl_weight', 'seed')
        if not 0.0 < self.schedule_factor <= 1.0:
            raise ConfigError(f'train.schedule_factor must be in (0, 1], got {self.schedule_factor}')


@dataclasses.dataclass
class ReconstructConfig:
    resolution: int = 100
    bound: float = 1.1
    slab_size: int = 8
    input_points: int = 16384
    chamfer_samples: int = 30000
    workers: int = 1

    def validate(self):
        _positive(self, 'bound', 'slab_size', 'input_points', 'chamfer_samples', 'workers')
        if self.resolution < 2:
            raise ConfigError(f'reconstruct.resolution must be at least 2, got {self.resolution}')


@dataclasses.dataclass
class Config:
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainSettings = dataclasses.field(default_factory=TrainSettings)
    reconstruct: ReconstructConfig = dataclasses.field(default_factory=ReconstructConfig)

    def validate(self):
        for section in dataclasses.fields(self):
            getattr(self, section.name).validate()
        return self

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.as_dict(), sort_keys=False, default_flow_style=False)

    @classmethod
    def from_dict(cls, data: typing.Optional[dict]) -> 'Config':
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError('config root must be a mapping of sections')

        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f'unknown config section(s): {", ".join(sorted(unknown))}')

        values = {}
        for name, section_field in sections.items():
            section_type = section_field.default_factory
            values[name] = _build_section(name, section_type, data.get(name) or {})
        return cls(**values).validate()


def _build_section(section_name, section_type, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f'config section {section_name} must be a mapping')

    defaults = section_type()
    known = {f.name: f for f in dataclasses.fields(section_type)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f'unknown config key {section_name}.{key}')
        kwargs[key] = _coerce(f'{section_name}.{key}', getattr(defaults, key), value)
    return section_type(**kwargs)


def _coerce(key, default, value):
    expected = type(default)
    if expected is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f'{key} must be true or false, got {value!r}')
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f'{key} must be an integer, got {value!r}')
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f'{key} must be a number, got {value!r}')
        return float(value)
    if not isinstance(value, expected):
        raise ConfigError(f'{key} must be {expected.__name__}, got {value!r}')
    return value


def _positive(section, *names):
    for name in names:
        value = getattr(section, name)
        if not value > 0:
            raise ConfigError(f'{_section_name(section)}.{name} must be positive, got {value}')


def _non_negative(section, *names):
    for name in names:
        value = getattr(section, name)
        if value < 0:
            raise ConfigError(f'{_section_name(section)}.{name} must not be negative, got {value}')


def _section_name(section):
    for f in dataclasses.fields(Config):
        if isinstance(section, f.default_factory):
            return f.name
    return type(section).__name__


def load_config(path=None) -> Config:
    if path is None:
        return Config().validate()
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f'cannot read config {path}: {e}')
    except yaml.YAMLError as e:
        raise ConfigError(f'config {path} is not valid YAML: {e}')
    return Config.from_dict(data)


def default_config() -> Config:
    from django.conf import settings
    return Config.from_dict(settings.CONFIG_DATA)
