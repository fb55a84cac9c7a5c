"""Run configuration: INI-style sections with key = value lines.

Unknown sections or keys are rejected, every value is type-checked, and
the fully resolved configuration (defaults filled in) can be rendered
back to text for the run directory.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

from .augment import AugmentConfig
from .contrastive import SslState
from .evaluate import ProbeConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "run": {"seed": int, "out": str},
    "data": {"unlabeled": str, "train": str, "val": str, "test": str},
    "augment": {
        "strategy": str,
        "t_up": int,
        "t_int_1": int,
        "t_int_2": int,
        "per_series": bool,
        "jitter_sigma": float,
        "resize_low": float,
        "resize_high": float,
        "mask_ratio": float,
    },
    "ssl": {
        "framework": str,
        "temperature": float,
        "momentum": float,
        "queue_capacity": int,
        "vicreg_lambda": float,
        "vicreg_mu": float,
        "vicreg_nu": float,
        "vicreg_gamma": float,
        "vicreg_eps": float,
        "collapse_std": float,
    },
    "train": {
        "total_steps": int,
        "batch_size": int,
        "base_lr": float,
        "peak_lr": float,
        "final_lr": float,
        "warmup_frac": float,
        "weight_decay": float,
        "momentum": float,
        "group_size": int,
        "eval_every": int,
        "block_filters": "ints",
        "kernel_sizes": "ints",
    },
    "eval": {
        "probe_c": float,
        "probe_tol": float,
        "probe_max_iter": int,
        "samples_per_class": "ints",
        "repeats": int,
        # plus checkpoint_<strategy> entries for the sweep
    },
}

_DEFAULTS = {
    "run": {"seed": 0, "out": "runs/default"},
    "data": {"unlabeled": "", "train": "", "val": "", "test": ""},
    "train": {"block_filters": (256, 512, 512), "kernel_sizes": (8, 5, 3)},
    "eval": {"samples_per_class": (5, 10), "repeats": 5},
}


def _coerce(section: str, key: str, raw: str):
    kind = _SCHEMA[section].get(key)
    if kind is None:
        if section == "eval" and key.startswith("checkpoint_"):
            return raw
        raise ConfigError(f"unknown key [{section}] {key}")
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "ints":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    data: dict = field(default_factory=dict)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    block_filters: tuple = (256, 512, 512)
    kernel_sizes: tuple = (8, 5, 3)
    samples_per_class: tuple = (5, 10)
    repeats: int = 5
    sweep_checkpoints: dict = field(default_factory=dict)
    ssl_kwargs: dict = field(default_factory=dict)

    def ssl_state(self) -> SslState:
        return SslState(**self.ssl_kwargs)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    values: dict[str, dict] = {s: dict(d) for s, d in _DEFAULTS.items()}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            values.setdefault(section, {})[key] = _coerce(section, key, raw)

    cfg = RunConfig()
    run = values.get("run", {})
    cfg.seed = run.get("seed", 0)
    cfg.out = run.get("out", "runs/default")
    cfg.data = {k: values.get("data", {}).get(k, "") for k in ("unlabeled", "train", "val", "test")}

    aug_kwargs = {k: v for k, v in values.get("augment", {}).items()}
    try:
        cfg.augment = AugmentConfig(**aug_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    train_kwargs = dict(values.get("train", {}))
    cfg.block_filters = tuple(train_kwargs.pop("block_filters", (256, 512, 512)))
    cfg.kernel_sizes = tuple(train_kwargs.pop("kernel_sizes", (8, 5, 3)))
    try:
        cfg.train = TrainConfig(seed=cfg.seed, **train_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    ssl_kwargs = dict(values.get("ssl", {}))
    try:
        SslState(**ssl_kwargs)  # validate eagerly
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.ssl_kwargs = ssl_kwargs

    ev = dict(values.get("eval", {}))
    cfg.sweep_checkpoints = {
        key[len("checkpoint_"):]: ev.pop(key)
        for key in sorted(k for k in ev if k.startswith("checkpoint_"))
    }
    cfg.samples_per_class = tuple(ev.pop("samples_per_class", (5, 10)))
    cfg.repeats = ev.pop("repeats", 5)
    probe_kwargs = {
        "c": ev.pop("probe_c", 1.0),
        "tol": ev.pop("probe_tol", 1e-5),
        "max_iter": ev.pop("probe_max_iter", 2000),
    }
    try:
        cfg.probe = ProbeConfig(**probe_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def resolved_text(cfg: RunConfig) -> str:
    """Render the fully resolved configuration back to INI text."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["run"] = {"seed": str(cfg.seed), "out": cfg.out}
    parser["data"] = {k: v for k, v in cfg.data.items()}
    aug = cfg.augment
    parser["augment"] = {
        "strategy": aug.strategy,
        "t_up": str(aug.t_up),
        "t_int_1": str(aug.t_int_1),
        "t_int_2": str(aug.t_int_2),
        "per_series": str(aug.per_series).lower(),
        "jitter_sigma": repr(aug.jitter_sigma),
        "resize_low": repr(aug.resize_low),
        "resize_high": repr(aug.resize_high),
        "mask_ratio": repr(aug.mask_ratio),
    }
    ssl = cfg.ssl_state()
    parser["ssl"] = {
        "framework": ssl.framework,
        "temperature": repr(ssl.temperature),
        "momentum": repr(ssl.momentum),
        "queue_capacity": str(ssl.queue_capacity),
        "vicreg_lambda": repr(ssl.vicreg_lambda),
        "vicreg_mu": repr(ssl.vicreg_mu),
        "vicreg_nu": repr(ssl.vicreg_nu),
        "vicreg_gamma": repr(ssl.vicreg_gamma),
        "vicreg_eps": repr(ssl.vicreg_eps),
        "collapse_std": repr(ssl.collapse_std),
    }
    tr = cfg.train
    parser["train"] = {
        "total_steps": str(tr.total_steps),
        "batch_size": str(tr.batch_size),
        "base_lr": repr(tr.base_lr),
        "peak_lr": repr(tr.peak_lr),
        "final_lr": repr(tr.final_lr),
        "warmup_frac": repr(tr.warmup_frac),
        "weight_decay": repr(tr.weight_decay),
        "momentum": repr(tr.momentum),
        "group_size": str(tr.group_size),
        "eval_every": str(tr.eval_every),
        "block_filters": ",".join(map(str, cfg.block_filters)),
        "kernel_sizes": ",".join(map(str, cfg.kernel_sizes)),
    }
    ev = {
        "probe_c": repr(cfg.probe.c),
        "probe_tol": repr(cfg.probe.tol),
        "probe_max_iter": str(cfg.probe.max_iter),
        "samples_per_class": ",".join(map(str, cfg.samples_per_class)),
        "repeats": str(cfg.repeats),
    }
    for strategy, path in sorted(cfg.sweep_checkpoints.items()):
        ev[f"checkpoint_{strategy}"] = path
    parser["eval"] = ev
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]
