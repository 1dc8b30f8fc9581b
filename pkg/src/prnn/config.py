"""Plain-text ``key = value`` configuration files.

Keys are dotted, ``section.field``::

    # matrix
    bulk.youngs_modulus = 3130      # MPa
    bulk.poisson_ratio = 0.37
    czm.normal_strength = 60        # MPa
    czm.g_ic = 0.874                # N/mm
    gp.length_scale = 200           # steps
    teacher.rng_seed = 2024
    train.learning_rate = 1e-3

Recognized sections: ``bulk`` (BulkProps), ``czm`` (CzmProps), ``gp``
(GpConfig), ``prop`` (step, n_steps), ``teacher`` (TeacherConfig scalars) and
``train`` (TrainConfig).
"""

from __future__ import annotations

import hashlib
from dataclasses import fields, replace

from .constitutive import BulkProps, CzmProps
from .loadpaths import GpConfig
from .oracle import TeacherConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "bulk": BulkProps,
    "czm": CzmProps,
    "gp": GpConfig,
    "teacher": TeacherConfig,
    "train": TrainConfig,
}
_PROP_KEYS = {"step": float, "n_steps": int}


def _coerce(text):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config(text):
    """Parse ``key = value`` lines into ``{section: {field: value}}``."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} needs a 'section.' prefix")
        section, name = key.split(".", 1)
        if section == "prop":
            if name not in _PROP_KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        elif section in _SECTIONS:
            allowed = {f.name for f in fields(_SECTIONS[section])}
            if name not in allowed or name in ("gp", "bulk_props", "czm_props", "mean"):
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        else:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        out.setdefault(section, {})[name] = _coerce(value)
    return out


def read_config(path):
    """Parsed sections and the SHA-256 of the file bytes (empty config for ``None``)."""
    if path is None:
        return {}, ""
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_config(data.decode()), hashlib.sha256(data).hexdigest()


def _build(cls, values, base=None):
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def bulk_props(cfg):
    return _build(BulkProps, cfg.get("bulk", {}))


def czm_props(cfg):
    return _build(CzmProps, cfg.get("czm", {}))


def gp_config(cfg, **overrides):
    return _build(GpConfig, {**cfg.get("gp", {}), **overrides})


def prop_settings(cfg):
    vals = cfg.get("prop", {})
    return float(vals.get("step", 1.67e-3)), int(vals.get("n_steps", 30))


def teacher_config(cfg, **overrides):
    return _build(TeacherConfig, {
        **cfg.get("teacher", {}), "gp": gp_config(cfg), "bulk_props": bulk_props(cfg),
        "czm_props": czm_props(cfg), **overrides,
    })


def train_config(cfg, **overrides):
    return _build(TrainConfig, {**cfg.get("train", {}), **{k: v for k, v in overrides.items() if v is not None}})
