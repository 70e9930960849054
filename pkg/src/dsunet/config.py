"""Profiles, model/run configuration, and the plain-text config format."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .tensor import ConfigError


@dataclass(frozen=True)
class Profile:
    """Feature geometry of one model size."""

    name: str
    main_size: int          # square input edge for the pyramid encoder
    aux_size: int           # square input edge for the token encoder
    hiera_channels: tuple[int, int, int, int]
    vit_channels: int
    patch: int = 14

    @property
    def hiera_sizes(self):
        return tuple(self.main_size // s for s in (4, 8, 16, 32))

    @property
    def vit_grid(self):
        return self.aux_size // self.patch

    def pyramid_shapes(self):
        """Expected shapes of S1..S4 and V."""
        shapes = {
            f"s{i + 1}": (c, s, s)
            for i, (c, s) in enumerate(zip(self.hiera_channels, self.hiera_sizes))
        }
        shapes["v"] = (self.vit_channels, self.vit_grid, self.vit_grid)
        return shapes


PROFILES = {
    "large": Profile("large", 352, 518, (144, 288, 576, 1152), 1024),
    "toy": Profile("toy", 96, 126, (24, 48, 96, 192), 128),
}

VARIANTS = ("A", "B", "C", "full")


@dataclass
class ModelConfig:
    profile: str = "toy"
    variant: str = "full"
    adapter_ratio: float = 0.25
    reduced_channels: int = 64
    loss_weights: tuple[float, float, float] = (0.25, 0.5, 1.0)
    beta2_f: float = 0.3
    pixel_weighted_loss: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if not 0.0 < self.adapter_ratio <= 1.0:
            raise ConfigError("adapter_ratio must be in (0, 1]")
        if self.reduced_channels < 1:
            raise ConfigError("reduced_channels must be >= 1")
        if any(w < 0 for w in self.loss_weights):
            raise ConfigError("loss_weights must be non-negative")

    @property
    def resolved_profile(self):
        return PROFILES[self.profile]


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-3
    weight_decay: float = 5e-4
    batch: int = 4
    epochs: int = 20
    seed: int = 42
    mode: str = "sod"
    n_train: int = 64
    n_val: int = 16
    data_dir: str = ""
    out_dir: str = "runs/out"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.mode not in ("sod", "cod"):
            raise ConfigError(f"unknown data mode {self.mode!r}")


# keys accepted in config files, mapped onto (dataclass, attribute)
_MODEL_KEYS = {
    "profile": str,
    "variant": str,
    "adapter_ratio": float,
    "reduced_channels": int,
    "loss_w1": float,
    "loss_w2": float,
    "loss_w3": float,
    "beta2_f": float,
    "pixel_weighted_loss": bool,
    "model_seed": int,
}
_RUN_KEYS = {
    "lr": float,
    "weight_decay": float,
    "batch": int,
    "epochs": int,
    "seed": int,
    "mode": str,
    "n_train": int,
    "n_val": int,
    "data_dir": str,
    "out_dir": str,
}


def _coerce(raw, typ, key):
    if typ is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text):
    """Parse `key = value` lines (# comments) into a RunConfig."""
    model_kwargs = {}
    run_kwargs = {}
    weights = list(ModelConfig().loss_weights)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in ("loss_w1", "loss_w2", "loss_w3"):
            weights[int(key[-1]) - 1] = _coerce(raw, float, key)
        elif key in _MODEL_KEYS:
            attr = "seed" if key == "model_seed" else key
            model_kwargs[attr] = _coerce(raw, _MODEL_KEYS[key], key)
        elif key in _RUN_KEYS:
            run_kwargs[key] = _coerce(raw, _RUN_KEYS[key], key)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    model_kwargs["loss_weights"] = tuple(weights)
    return RunConfig(model=ModelConfig(**model_kwargs), **run_kwargs)


def parse_config_file(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def render_config(run):
    """Serialize a RunConfig back to the config-file format."""
    m = run.model
    lines = [
        f"profile = {m.profile}",
        f"variant = {m.variant}",
        f"adapter_ratio = {m.adapter_ratio!r}",
        f"reduced_channels = {m.reduced_channels}",
        f"loss_w1 = {m.loss_weights[0]!r}",
        f"loss_w2 = {m.loss_weights[1]!r}",
        f"loss_w3 = {m.loss_weights[2]!r}",
        f"beta2_f = {m.beta2_f!r}",
        f"pixel_weighted_loss = {str(m.pixel_weighted_loss).lower()}",
        f"model_seed = {m.seed}",
    ]
    for f_ in fields(RunConfig):
        if f_.name == "model":
            continue
        lines.append(f"{f_.name} = {getattr(run, f_.name)!r}"
                     if isinstance(getattr(run, f_.name), float)
                     else f"{f_.name} = {getattr(run, f_.name)}")
    return "\n".join(lines) + "\n"
