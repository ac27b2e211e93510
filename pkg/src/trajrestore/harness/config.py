"""Experiment configs: INI-style sections of ``key = value`` lines.

Grammar: ``[section]`` headers, ``key = value`` lines, ``#`` or ``;``
comments.  Lists are comma-separated.  Every key must be known; unknown
sections or keys are rejected before any work starts.
"""
from __future__ import annotations

import configparser
import hashlib

from ..degrade import CATEGORIES


def _ints(s):
    return [int(x) for x in str(s).split(",") if x.strip()]


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _categories(s):
    s = str(s).strip()
    if s == "all":
        return list(CATEGORIES)
    cats = [c.strip() for c in s.split(",") if c.strip()]
    bad = [c for c in cats if c not in CATEGORIES]
    if bad:
        raise ValueError(f"unknown categories {bad}")
    return cats


def _str(s):
    return str(s).strip()


# section -> key -> (parser, raw default)
SCHEMA = {
    "experiment": {
        "name": (_str, "experiment"),
        "seed": (int, 42),
        "precision": (_str, "f32"),
        "threads": (int, 1),
    },
    "dataset": {
        "categories": (_categories, "all"),
        "train_per_category": (int, 50),
        "test_per_category": (int, 10),
        "image_size": (int, 32),
        "seed": (int, 1),
        "train_manifest": (_str, ""),
        "test_manifest": (_str, ""),
    },
    "model": {
        "mode": (_str, "regress"),
        "frame_interval": (int, 8),
        "patch_size": (int, 4),
        "embed_dim": (int, 64),
        "layers": (int, 4),
        "heads": (int, 4),
        "condition_dropout_prob": (float, 0.1),
        "anchor_skip": (_bool, "false"),
    },
    "schedule": {
        "resolutions": (_ints, "16,24,32"),
        "total_epochs": (int, 9),
        "steps_per_epoch": (int, 200),
        "batch_size": (int, 4),
        "lr": (float, 2e-5),
        "warmup_steps": (int, 100),
        "weight_decay": (float, 3e-2),
        "epsilon": (float, 1e-10),
        "max_grad_norm": (float, 0.05),
        "data_mode": (_str, "crop"),
        "allow_decreasing": (_bool, "false"),
    },
    "sampler": {
        "steps": (int, 50),
        "guidance_scale": (float, 5.0),
        "shift": (float, 5.0),
    },
    "corrector": {
        "enabled": (_bool, "false"),
        "intervals": (int, 4),
        "split": (_str, "train"),
        # empty, 0: inherit from [schedule]
        "resolutions": (_ints, ""),
        "total_epochs": (int, 0),
        "steps_per_epoch": (int, 0),
    },
    "eval": {
        "resize_limit": (int, 2048),
    },
    "sweep": {
        "frame_interval": (_ints, ""),
        "resolutions": (_str, ""),
        "train_per_category": (_ints, ""),
        "seeds": (_ints, ""),
    },
}


class ConfigError(ValueError):
    pass


def parse_config_text(text, source="<config>"):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    out = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
    for section, keys in SCHEMA.items():
        out[section] = {}
        for key, (parse, default) in keys.items():
            raw = cp.get(section, key, fallback=None) if cp.has_section(section) else None
            try:
                out[section][key] = parse(raw if raw is not None else default)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from exc
    _check(out, source)
    return out


def _check(cfg, source):
    if cfg["model"]["mode"] not in ("regress", "flow"):
        raise ConfigError(f"{source}: [model] mode must be regress or flow")
    if cfg["schedule"]["data_mode"] not in ("crop", "downup"):
        raise ConfigError(f"{source}: [schedule] data_mode must be crop or downup")
    if cfg["experiment"]["precision"] not in ("f32", "f64"):
        raise ConfigError(f"{source}: [experiment] precision must be f32 or f64")
    if cfg["corrector"]["split"] not in ("train", "disjoint"):
        raise ConfigError(f"{source}: [corrector] split must be train or disjoint")


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    cfg = parse_config_text(text, source=path)
    cfg["_hash"] = config_hash(text)
    return cfg


def config_hash(text):
    return hashlib.sha256(text.encode()).hexdigest()[:16]
