"""Experiment configuration: dataclasses plus a flat ``section.key = value`` parser."""

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction

from otlpf.filters import FilterConfig
from otlpf.models import (
    KuramotoSivashinskyParams,
    StochasticTurbulenceParams,
    make_model,
)

MODEL_KINDS = ("st_linear", "st_transformed", "ks_linear", "ks_tanh")
FILTER_KINDS = ("letkf", "etpf", "sletpf", "bootstrap_pf")

ST_ONLY = ("length_scale", "amplitude", "transform_scale")
KS_ONLY = ("S", "spinup_intervals")


@dataclass
class ModelConfig:
    """Model family and parameter overrides.

    Fields left as ``None`` fall back to the family defaults.
    """

    kind: str = "st_linear"
    M: int = 512
    T: int = 200
    L: int = 64
    obs_std: float = 0.5
    delta: float = None
    theta1: float = None
    theta2: float = None
    theta3: float = None
    theta4: float = None
    length_scale: float = None
    amplitude: float = None
    transform_scale: float = None
    S: int = None
    spinup_intervals: int = None

    def params(self):
        """Model parameter object for this configuration."""
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        ks = self.kind.startswith("ks")
        foreign = KS_ONLY if not ks else ST_ONLY
        for name in foreign:
            if getattr(self, name) is not None:
                raise ValueError(f"model.{name} does not apply to {self.kind}")
        values = {"M": self.M, "T": self.T, "L": self.L, "obs_std": self.obs_std}
        names = ("delta", "theta1", "theta2", "theta3", "theta4")
        names += KS_ONLY if ks else ("length_scale", "amplitude")
        for name in names:
            if getattr(self, name) is not None:
                values[name] = getattr(self, name)
        cls = KuramotoSivashinskyParams if ks else StochasticTurbulenceParams
        return cls(**values)

    def build(self):
        """Instantiate the model."""
        return make_model(self.kind, self.params(), self.transform_scale)


@dataclass
class RunConfig:
    """Seeds, sweep grids and output settings.

    Grid fields hold comma separated lists or ``start:stop:step`` ranges.
    """

    seed: int = 0
    repeats: int = 1
    out: str = "results.csv"
    threads: int = 1
    r_grid: str = ""
    B_grid: str = ""
    w_grid: str = ""
    n_eff_min: float = None
    n_eff_max: float = None
    ground_truth_samples: int = 10_000
    reference_particles: int = 0
    dump_ensembles: bool = False


@dataclass
class ExperimentConfig:
    """Full experiment: model, filter and run settings."""

    model: ModelConfig = field(default_factory=ModelConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self):
        self.model.params()
        if self.filter.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.filter.kind!r}")
        return self

    def admissible_window(self):
        """Median effective-observation window used to filter ``r`` grids."""
        lo, hi = (2.0, 6.0) if self.model.kind == "ks_tanh" else (1.0, 5.0)
        lo = lo if self.run.n_eff_min is None else self.run.n_eff_min
        hi = hi if self.run.n_eff_max is None else self.run.n_eff_max
        return lo, hi

    def with_filter(self, **changes):
        """Copy with some filter fields replaced."""
        return dataclasses.replace(self, filter=dataclasses.replace(self.filter, **changes))


def parse_number(text):
    """Parse an int, a float or a fraction such as ``1/256``."""
    text = text.strip()
    if "/" in text:
        return float(Fraction(text))
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_grid(text):
    """Parse ``a,b,c`` or an inclusive ``start:stop:step`` range into floats."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        start, stop, step = (Fraction(part.strip()) for part in text.split(":"))
        if step <= 0:
            raise ValueError(f"grid step must be positive in {text!r}")
        count = int((stop - start) / step)
        return [float(start + i * step) for i in range(count + 1)]
    return [float(parse_number(part)) for part in text.split(",")]


def _coerce(value, annotation, key):
    kind = annotation if isinstance(annotation, type) else None
    text = value.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {value!r}")
        return lowered in ("true", "1", "yes")
    if kind is int:
        number = parse_number(text)
        if float(number) != int(number):
            raise ValueError(f"{key}: expected an integer, got {value!r}")
        return int(number)
    if kind is float:
        return float(parse_number(text))
    return text


def parse_config(text, base=None):
    """Parse flat ``section.key = value`` lines into an :class:`ExperimentConfig`.

    Blank lines and ``#`` comments are ignored. Unknown sections or keys raise
    ``ValueError`` so that typos in sweep files fail loudly.
    """
    config = base if base is not None else ExperimentConfig()
    sections = {"model": config.model, "filter": config.filter, "run": config.run}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        section, _, name = key.partition(".")
        target = sections.get(section)
        if target is None or not name:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        fields = {f.name: f for f in dataclasses.fields(target)}
        if name not in fields:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        setattr(target, name, _coerce(value, fields[name].type, key))
    return config.validate()


def load_config(path):
    """Read and parse a configuration file."""
    with open(path, encoding="utf-8") as handle:
        return parse_config(handle.read())
