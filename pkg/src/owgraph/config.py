"""Flat key/value experiment configuration.

Config files are plain text: one `section.key = value` per line, `#`
comments, blank lines ignored. Every field has a default; the echo written
into each report lists all of them so no default stays silent. Exactly one
of dataset.path / sbm.class_sizes must be set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset_path: str | None = None
    dataset_feature_scale: float | None = None
    sbm_class_sizes: tuple[int, ...] | None = None
    sbm_intra: float = 0.1
    sbm_inter: float = 0.01
    sbm_feature_dim: int = 16
    sbm_separation: float = 4.0
    sbm_noise: float = 1.0
    sbm_seed: int = 0
    split_known_class_fraction: float = 0.8
    split_train_fraction: float = 0.7
    split_val_fraction: float = 0.15
    split_seed: int = 0
    model_n_prototypes: int = 40
    model_topk: int = 3
    model_layers: int = 3
    model_hidden_dim: int = 64
    model_activation: str = "relu"
    model_attention: str = "group"
    train_learning_rate: float = 0.01
    train_max_iterations: int = 200
    train_refine_period: int = 50
    train_pseudo_supervision: bool = True
    pseudo_eta: float = 0.01
    pseudo_gamma: float = 0.3
    refine_mu: float = 0.015
    refine_enabled: bool = True
    augment_edge_drop_rate: float = 0.2
    augment_feature_mask_rate: float = 0.1
    granularity_fixed: int | None = None
    granularity_min: int | None = None
    granularity_max: int | None = None
    run_seed: int = 0

    def validate(self):
        has_path = self.dataset_path is not None
        has_sbm = self.sbm_class_sizes is not None
        if has_path == has_sbm:
            raise ConfigError(
                "exactly one of dataset.path and sbm.class_sizes must be set")
        if self.model_activation not in ("relu", "identity"):
            raise ConfigError(f"unknown activation {self.model_activation!r}")
        if self.model_attention not in ("group", "uniform"):
            raise ConfigError(f"unknown attention mode {self.model_attention!r}")
        for name in ("model_n_prototypes", "model_topk", "model_layers",
                     "model_hidden_dim", "train_refine_period"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{_ATTR_TO_KEY[name]} must be positive")
        if self.train_max_iterations < 0:
            raise ConfigError("train.max_iterations must be nonnegative")
        if self.dataset_feature_scale is not None and self.dataset_feature_scale <= 0:
            raise ConfigError("dataset.feature_scale must be positive")
        return self


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _optional(parse):
    return lambda s: None if s.strip().lower() in ("", "none") else parse(s)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# dotted config key -> (dataclass attribute, value parser)
FIELDS = {
    "dataset.path": ("dataset_path", _optional(str)),
    "dataset.feature_scale": ("dataset_feature_scale", _optional(float)),
    "sbm.class_sizes": ("sbm_class_sizes", _optional(_parse_int_list)),
    "sbm.intra": ("sbm_intra", float),
    "sbm.inter": ("sbm_inter", float),
    "sbm.feature_dim": ("sbm_feature_dim", int),
    "sbm.separation": ("sbm_separation", float),
    "sbm.noise": ("sbm_noise", float),
    "sbm.seed": ("sbm_seed", int),
    "split.known_class_fraction": ("split_known_class_fraction", float),
    "split.train_fraction": ("split_train_fraction", float),
    "split.val_fraction": ("split_val_fraction", float),
    "split.seed": ("split_seed", int),
    "model.n_prototypes": ("model_n_prototypes", int),
    "model.topk": ("model_topk", int),
    "model.layers": ("model_layers", int),
    "model.hidden_dim": ("model_hidden_dim", int),
    "model.activation": ("model_activation", str),
    "model.attention": ("model_attention", str),
    "train.learning_rate": ("train_learning_rate", float),
    "train.max_iterations": ("train_max_iterations", int),
    "train.refine_period": ("train_refine_period", int),
    "train.pseudo_supervision": ("train_pseudo_supervision", _parse_bool),
    "pseudo.eta": ("pseudo_eta", float),
    "pseudo.gamma": ("pseudo_gamma", float),
    "refine.mu": ("refine_mu", float),
    "refine.enabled": ("refine_enabled", _parse_bool),
    "augment.edge_drop_rate": ("augment_edge_drop_rate", float),
    "augment.feature_mask_rate": ("augment_feature_mask_rate", float),
    "granularity.fixed": ("granularity_fixed", _optional(int)),
    "granularity.min": ("granularity_min", _optional(int)),
    "granularity.max": ("granularity_max", _optional(int)),
    "run.seed": ("run_seed", int),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in FIELDS.items()}

# hyperparameter sweep names from the sensitivity analysis
SWEEP_PARAMS = {
    "N_pro": "model.n_prototypes",
    "gamma": "pseudo.gamma",
    "mu": "refine.mu",
    "L": "model.layers",
    "eta": "pseudo.eta",
}


def parse_pairs(text: str) -> dict[str, str]:
    """`key = value` lines into a dict; later duplicates win."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def apply_pairs(cfg: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    updates = {}
    for key, value in pairs.items():
        if key not in FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, parse = FIELDS[key]
        try:
            updates[attr] = parse(value)
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(f"bad value for {key}: {err}") from err
    return replace(cfg, **updates)


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """File pairs first, then overrides (flags beat the file)."""
    cfg = ExperimentConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = apply_pairs(cfg, parse_pairs(fh.read()))
    if overrides:
        cfg = apply_pairs(cfg, overrides)
    return cfg.validate()


def config_echo(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """Every field as a (dotted key, formatted value) pair, file order."""
    return [(key, _fmt(getattr(cfg, attr))) for key, (attr, _) in FIELDS.items()]


def dump_config(cfg: ExperimentConfig) -> str:
    return "\n".join(f"{k} = {v}" for k, v in config_echo(cfg)) + "\n"
