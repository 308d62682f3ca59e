"""
Layer and training configuration.

Configuration files are plain text with one ``key = value`` per line and ``#``
comments. Missing keys take the toy defaults; unknown keys are rejected.
"""
from fractions import Fraction
from pathlib import Path

import sidekick as sk

from .fbm import DEFAULT_BANDS, build_band_masks, check_bands
from .fdw import assign_groups, build_index_table, unit_count
from .jinja import render

MODELS = ("fdconv", "static")
OPTIMIZERS = ("momentum", "adam")


class ConfigError(ValueError):
    """
    Invalid configuration file or value.
    """


class FDConvConfig(sk.Record):
    """
    Hyper-parameters of a single FDConv layer.
    """

    k: int = 3
    c_in: int = 8
    c_out: int = 8
    n: int = 64
    bands: tuple = DEFAULT_BANDS
    tau: float = 1.0
    enable_ksm: bool = True
    enable_fbm: bool = True
    seed: int = 0

    def __init__(
        self,
        k=3,
        c_in=8,
        c_out=8,
        n=64,
        bands=DEFAULT_BANDS,
        tau=1.0,
        enable_ksm=True,
        enable_fbm=True,
        seed=0,
    ):
        if k < 1 or k % 2 == 0:
            raise ValueError(f"kernel extent must be a positive odd number, got k={k}")
        if c_in < 1 or c_out < 1:
            raise ValueError(f"channel counts must be positive, got {c_in} and {c_out}")
        units = unit_count(k, c_in, c_out)
        if not 1 <= n <= units:
            raise ValueError(
                f"weight count n={n} must be within 1…{units} (the unit count)"
            )
        if not tau > 0:
            raise ValueError(f"temperature must be positive, got tau={tau}")
        bands = check_bands(bands)
        super().__init__(
            int(k),
            int(c_in),
            int(c_out),
            int(n),
            bands,
            float(tau),
            bool(enable_ksm),
            bool(enable_fbm),
            int(seed),
        )

    @property
    def band_count(self):
        return len(self.bands) - 1

    @property
    def table(self):
        return build_index_table(self.k, self.c_in, self.c_out)

    @property
    def assignment(self):
        return assign_groups(self.table, self.n)

    def masks(self, h, w):
        return build_band_masks(h, w, self.bands)

    def as_dict(self):
        return {name: getattr(self, name) for name in LAYER_FIELDS}

    def replace(self, **kwargs):
        return FDConvConfig(**{**self.as_dict(), **kwargs})


LAYER_FIELDS = (
    "k",
    "c_in",
    "c_out",
    "n",
    "bands",
    "tau",
    "enable_ksm",
    "enable_fbm",
    "seed",
)
TOY_LAYER = dict(k=3, c_in=1, c_out=8, n=8)


class TrainConfig(sk.Record):
    """
    Toy task, model and optimizer settings.
    """

    layer: FDConvConfig
    model: str = "fdconv"
    optimizer: str = "adam"
    lr: float = 0.01
    batch: int = 32
    steps: int = 600
    dataset_size: int = 2000
    dataset_s: int = 32
    dataset_sigma: float = 0.1
    workers: int = 1

    def __init__(
        self,
        layer=None,
        model="fdconv",
        optimizer="adam",
        lr=0.01,
        batch=32,
        steps=600,
        dataset_size=2000,
        dataset_s=32,
        dataset_sigma=0.1,
        workers=1,
    ):
        layer = FDConvConfig(**TOY_LAYER) if layer is None else layer
        if model not in MODELS:
            raise ValueError(f"invalid model: {model!r} (expect one of {MODELS})")
        if optimizer not in OPTIMIZERS:
            raise ValueError(
                f"invalid optimizer: {optimizer!r} (expect one of {OPTIMIZERS})"
            )
        if not lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        counts = [("batch", batch), ("dataset.size", dataset_size), ("workers", workers)]
        for name, value in counts:
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
        if steps < 0:
            raise ValueError(f"steps must be non-negative, got {steps}")
        if dataset_sigma < 0:
            raise ValueError(f"noise level must be non-negative, got {dataset_sigma}")
        super().__init__(
            layer,
            model,
            optimizer,
            float(lr),
            int(batch),
            int(steps),
            int(dataset_size),
            int(dataset_s),
            float(dataset_sigma),
            int(workers),
        )

    @property
    def seed(self):
        return self.layer.seed

    def as_dict(self):
        return {name: getattr(self, name) for name in TRAIN_FIELDS}

    def replace(self, **kwargs):
        layer = {k: kwargs.pop(k) for k in LAYER_FIELDS if k in kwargs}
        if layer:
            kwargs["layer"] = self.layer.replace(**layer)
        return TrainConfig(**{**self.as_dict(), **kwargs})


TRAIN_FIELDS = (
    "layer",
    "model",
    "optimizer",
    "lr",
    "batch",
    "steps",
    "dataset_size",
    "dataset_s",
    "dataset_sigma",
    "workers",
)


#
# Config files
#
def parse_bool(text):
    value = text.strip().lower()
    if value in ("true", "yes", "on", "1"):
        return True
    elif value in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"invalid boolean: {text!r}")


def parse_bands(text):
    return tuple(float(Fraction(x.strip())) for x in text.split(","))


KEYS = {
    "k": ("k", int),
    "c_in": ("c_in", int),
    "c_out": ("c_out", int),
    "n": ("n", int),
    "tau": ("tau", float),
    "bands": ("bands", parse_bands),
    "enable_ksm": ("enable_ksm", parse_bool),
    "enable_fbm": ("enable_fbm", parse_bool),
    "seed": ("seed", int),
    "model": ("model", str),
    "optimizer": ("optimizer", str),
    "lr": ("lr", float),
    "batch": ("batch", int),
    "steps": ("steps", int),
    "workers": ("workers", int),
    "dataset.size": ("dataset_size", int),
    "dataset.s": ("dataset_s", int),
    "dataset.sigma": ("dataset_sigma", float),
}


def parse_config(text, path="<config>") -> TrainConfig:
    """
    Parse configuration text into a TrainConfig.
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expect 'key = value', got {line!r}")
        try:
            name, parse = KEYS[key]
        except KeyError:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if name in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[name] = parse(raw)
        except ValueError as ex:
            raise ConfigError(f"{path}:{lineno}: invalid value for {key!r}: {ex}")

    layer = {k: values.pop(k) for k in LAYER_FIELDS if k in values}
    try:
        return TrainConfig(FDConvConfig(**{**TOY_LAYER, **layer}), **values)
    except ValueError as ex:
        raise ConfigError(f"{path}: {ex}")


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as ex:
        raise ConfigError(f"cannot read config file {path}: {ex.strerror}")
    return parse_config(text, str(path))


def render_config(config: TrainConfig) -> str:
    """
    Canonical text of a configuration; parse_config reads it back unchanged.
    """
    return render("config", cfg=config, layer=config.layer)
