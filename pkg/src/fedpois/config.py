"""Experiment configuration in a flat ``section.key = value`` text format.

Blank lines and ``#`` comments are ignored. Every key has a documented
default (see :func:`defaults_text`), unknown keys are rejected and
:func:`serialize` writes a text that parses back to an equal config.
"""
from __future__ import annotations

import dataclasses
import math
import os
import typing
from dataclasses import dataclass, field

from .errors import ConfigInvalid, CrossFieldViolation, ParseError, UnknownKey


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"          # synthetic | idx
    image_path: str = ""               # idx image file (source = idx)
    label_path: str = ""               # idx label file (source = idx)
    num_classes: int = 4
    feature_dim: int = 20
    num_samples: int = 20000
    class_separation: float = 4.0      # pairwise distance between class means
    noise_std: float = 1.0
    alpha: float = 1.0                 # Dirichlet concentration, small = skewed
    num_clients: int = 100
    min_samples_per_client: int = 2
    train_frac: float = 0.7
    test_frac: float = 0.15
    trigger_coords: str = "auto"       # auto (last 4 features) or comma list
    trigger_magnitude: float = 2.0
    target_label: int = 0


@dataclass(frozen=True)
class ModelSection:
    hidden: tuple = (32, 32)
    activation: str = "relu"
    local_lr: float = 0.05             # client SGD step size
    local_steps: int = 20              # SGD steps per round
    batch_size: int = 16


@dataclass(frozen=True)
class AttackSection:
    kind: str = "collapois"            # collapois | dpois | mrepl | dba | none
    compromised_fraction: float = 0.05
    psi_low: float = 0.9
    psi_high: float = 1.0
    clip_bound: str = "none"           # none | auto (benign median norm) | number
    upscale_floor: float = 0.0
    mrepl_scale: float = 1.0
    dpois_rate: float = 0.5
    trojan_lr: float = 0.1
    trojan_epochs: int = 50
    trojan_max_epochs: int = 400
    trojan_batch_size: int = 32
    trojan_min_benign_ac: float = 0.8  # held-out thresholds X must reach
    trojan_min_attack_sr: float = 0.9


@dataclass(frozen=True)
class DefenseSection:
    kind: str = "fedavg"
    krum_f: str = "auto"               # auto = ceil(q * |C|) or an integer
    multikrum_m: int = 1
    trim_beta: float = 0.1
    norm_M: str = "auto"               # auto (benign median norm) or number
    noise_sigma: float = 0.0
    dp_clip: str = "auto"
    dp_sigma: float = 0.01
    rlr_threshold: str = "auto"        # auto = ceil(expected |S| / 2) + 1


@dataclass(frozen=True)
class FLSection:
    num_rounds: int = 200
    sample_prob: float = 0.2
    server_lr: float = 1.0
    personalization: str = "none"      # none | proximal
    prox_mu: float = 0.0


@dataclass(frozen=True)
class TheorySection:
    detect_precision: float = 1.0
    zeta_eps: float = 0.1
    log_bounds: bool = True
    angle_regimes: str = "1.2:0.4,0.3:0.1"   # mu:sigma pairs (radians) for the bounds command
    mc_draws: int = 10000


@dataclass(frozen=True)
class OutputSection:
    directory: str = "run"
    emit_plots: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    attack: AttackSection = field(default_factory=AttackSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    fl: FLSection = field(default_factory=FLSection)
    theory: TheorySection = field(default_factory=TheorySection)
    output: OutputSection = field(default_factory=OutputSection)
    root_seed: int = 0

    def replace(self, **flat):
        """Copy with ``{"data.alpha": 0.5, "root_seed": 3}``-style overrides, validated."""
        return build(flat, base=self)


SECTIONS = ("data", "model", "attack", "defense", "fl", "theory", "output")
_CHOICES = {
    "data.source": ("synthetic", "idx"),
    "model.activation": ("relu", "tanh"),
    "attack.kind": ("collapois", "dpois", "mrepl", "dba", "none"),
    "defense.kind": ("fedavg", "krum", "multikrum", "median", "trimmed_mean", "norm_bound", "dp", "rlr"),
    "fl.personalization": ("none", "proximal"),
}
_AUTO_NUMBER = {"attack.clip_bound": ("none", "auto"), "defense.krum_f": ("auto",),
                "defense.norm_M": ("auto",), "defense.dp_clip": ("auto",),
                "defense.rlr_threshold": ("auto",)}


def _fields():
    out = {}
    for sec in SECTIONS:
        cls = type(getattr(ExperimentConfig(), sec))
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            out[f"{sec}.{f.name}"] = hints[f.name]
    out["root_seed"] = int
    return out


def _convert(key, typ, raw):
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if typ is tuple:
        return tuple(int(p) for p in raw.split(",") if p.strip()) if raw else ()
    if key in _AUTO_NUMBER and raw.lower() not in _AUTO_NUMBER[key]:
        v = float(raw)
        return repr(int(v)) if key.endswith(("krum_f", "rlr_threshold")) and v == int(v) else repr(v)
    return raw.lower() if key in _AUTO_NUMBER or key in _CHOICES else raw


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def build(flat, base=None):
    """Config from a ``{"section.key": value}`` mapping over ``base`` (defaults)."""
    base = base or ExperimentConfig()
    types = _fields()
    problems, updates = [], {s: {} for s in SECTIONS}
    root_seed = base.root_seed
    for key, value in flat.items():
        if key not in types:
            raise UnknownKey([f"unknown key {key!r}"])
        if isinstance(value, str):
            try:
                value = _convert(key, types[key], value)
            except ValueError as exc:
                problems.append(f"{key}: {exc}")
                continue
        elif key in _AUTO_NUMBER and not isinstance(value, str):
            value = _convert(key, str, repr(value))
        elif types[key] is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif types[key] is tuple:
            value = tuple(int(v) for v in value)
        if key == "root_seed":
            root_seed = int(value)
        else:
            sec, name = key.split(".", 1)
            updates[sec][name] = value
    if problems:
        raise ConfigInvalid(problems)
    kwargs = {s: dataclasses.replace(getattr(base, s), **updates[s]) for s in SECTIONS}
    cfg = ExperimentConfig(**kwargs, root_seed=root_seed)
    validate(cfg)
    return cfg


def validate(cfg):
    """Raise :class:`CrossFieldViolation` listing every problem found."""
    p = []
    d, m, a, df, fl, th = cfg.data, cfg.model, cfg.attack, cfg.defense, cfg.fl, cfg.theory
    for key, choices in _CHOICES.items():
        sec, name = key.split(".")
        if getattr(getattr(cfg, sec), name) not in choices:
            p.append(f"{key} must be one of {', '.join(choices)}")
    for key, allowed in _AUTO_NUMBER.items():
        sec, name = key.split(".")
        v = getattr(getattr(cfg, sec), name)
        if v not in allowed:
            try:
                num = float(v)
            except ValueError:
                p.append(f"{key} must be {' / '.join(allowed)} or a number")
                continue
            if not num > 0:
                p.append(f"{key} must be positive")
    if d.source == "idx" and not (d.image_path and d.label_path):
        p.append("data.image_path and data.label_path are required when data.source = idx")
    if d.num_classes < 2:
        p.append("data.num_classes must be >= 2")
    if d.feature_dim < 1:
        p.append("data.feature_dim must be >= 1")
    if d.source == "synthetic" and d.feature_dim < d.num_classes - 1:
        p.append("data.feature_dim must be >= data.num_classes - 1")
    if d.num_samples < 1:
        p.append("data.num_samples must be >= 1")
    if not d.class_separation > 0 or d.noise_std < 0:
        p.append("data.class_separation must be > 0 and data.noise_std >= 0")
    if not d.alpha > 0:
        p.append("data.alpha must be > 0")
    if d.num_clients < 1:
        p.append("data.num_clients must be >= 1")
    if d.min_samples_per_client < 1:
        p.append("data.min_samples_per_client must be >= 1")
    if not (0 < d.train_frac < 1 and 0 < d.test_frac < 1 and d.train_frac + d.test_frac <= 1):
        p.append("data.train_frac and data.test_frac must be in (0, 1) with sum <= 1")
    if not 0 <= d.target_label < d.num_classes:
        p.append("data.target_label must be a valid class")
    if d.trigger_coords != "auto":
        try:
            coords = [int(c) for c in d.trigger_coords.split(",")]
            if any(c < 0 or c >= d.feature_dim for c in coords):
                p.append("data.trigger_coords outside the feature range")
            if any(b <= a_ for a_, b in zip(coords, coords[1:])):
                p.append("data.trigger_coords must be strictly increasing")
        except ValueError:
            p.append("data.trigger_coords must be auto or a comma list of integers")
    if any(h < 1 for h in m.hidden):
        p.append("model.hidden widths must be >= 1")
    if not m.local_lr >= 0 or m.local_steps < 1 or m.batch_size < 1:
        p.append("model.local_lr >= 0, model.local_steps >= 1 and model.batch_size >= 1 required")
    if not 0 <= a.compromised_fraction < 1:
        p.append("attack.compromised_fraction must be in [0, 1)")
    if not 0 < a.psi_low <= 1:
        p.append("attack.psi_low must be in (0, 1]")
    if not 0 < a.psi_high <= 1:
        p.append("attack.psi_high must be in (0, 1]")
    if a.psi_low > a.psi_high:
        p.append("attack.psi_low must not exceed attack.psi_high")
    if a.upscale_floor < 0:
        p.append("attack.upscale_floor must be >= 0")
    if a.clip_bound not in ("none", "auto"):
        try:
            if a.upscale_floor > float(a.clip_bound):
                p.append("attack.upscale_floor (tau) must not exceed attack.clip_bound (A)")
        except ValueError:
            pass
    if not 0 < a.dpois_rate <= 1:
        p.append("attack.dpois_rate must be in (0, 1]")
    if not a.mrepl_scale > 0 or not a.trojan_lr > 0:
        p.append("attack.mrepl_scale and attack.trojan_lr must be > 0")
    if not (0 <= a.trojan_min_benign_ac <= 1 and 0 <= a.trojan_min_attack_sr <= 1):
        p.append("attack.trojan_min_benign_ac and attack.trojan_min_attack_sr must be in [0, 1]")
    if a.trojan_epochs < 1 or a.trojan_max_epochs < a.trojan_epochs or a.trojan_batch_size < 1:
        p.append("attack.trojan_epochs >= 1, trojan_max_epochs >= trojan_epochs, trojan_batch_size >= 1")
    if not 0 <= df.trim_beta < 0.5:
        # below one half, floor(beta * n) trims fewer than n / 2 from each side
        p.append("defense.trim_beta must be in [0, 0.5)")
    if df.multikrum_m < 1:
        p.append("defense.multikrum_m must be >= 1")
    if df.noise_sigma < 0 or df.dp_sigma < 0:
        p.append("defense noise levels must be >= 0")
    if fl.num_rounds < 1:
        p.append("fl.num_rounds must be >= 1")
    if not 0 < fl.sample_prob <= 1:
        p.append("fl.sample_prob must be in (0, 1]")
    elif fl.sample_prob * d.num_clients < 1:
        p.append("fl.sample_prob * data.num_clients must be >= 1 (expected round size)")
    if not fl.server_lr > 0:
        p.append("fl.server_lr must be > 0")
    if fl.prox_mu < 0:
        p.append("fl.prox_mu must be >= 0")
    if not 0 < th.detect_precision <= 1:
        p.append("theory.detect_precision must be in (0, 1]")
    if th.zeta_eps < 0:
        p.append("theory.zeta_eps must be >= 0")
    if th.mc_draws < 1:
        p.append("theory.mc_draws must be >= 1")
    try:
        regimes = angle_regimes(th.angle_regimes)
        if any(sd < 0 for _, sd in regimes):
            p.append("theory.angle_regimes: sigma must be >= 0")
    except ValueError:
        p.append("theory.angle_regimes must be comma-separated mu:sigma pairs")
    if p:
        raise CrossFieldViolation(p)
    return cfg


def angle_regimes(text):
    """``"1.2:0.4,0.3:0.1"`` -> ``[(1.2, 0.4), (0.3, 0.1)]``."""
    out = []
    for part in text.split(","):
        mu, sd = part.split(":")
        out.append((float(mu), float(sd)))
    return out


def parse_config(text):
    """Parse the flat config format; raises :class:`ParseError` with the line number."""
    flat, seen = {}, {}
    types = _fields()
    for no, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(no, f"expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in types:
            raise UnknownKey([f"line {no}: unknown key {key!r}"])
        if key in seen:
            raise ParseError(no, f"{key} already set on line {seen[key]}")
        seen[key] = no
        flat[key] = value
    env = os.environ.get("FEDPOIS_SEED")
    if env is not None and env.strip():
        flat["root_seed"] = env.strip()
    return build(flat)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def to_flat(cfg):
    flat = {}
    for sec in SECTIONS:
        for f in dataclasses.fields(getattr(cfg, sec)):
            flat[f"{sec}.{f.name}"] = getattr(getattr(cfg, sec), f.name)
    flat["root_seed"] = cfg.root_seed
    return flat


def serialize(cfg):
    lines, last = [], None
    for key, value in to_flat(cfg).items():
        sec = key.split(".")[0] if "." in key else None
        if last is not None and sec != last:
            lines.append("")
        last = sec
        lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


def defaults_text():
    """Default config with the per-key notes from this module's source."""
    import inspect

    notes = {}
    for sec in SECTIONS:
        cls = type(getattr(ExperimentConfig(), sec))
        for line in inspect.getsource(cls).splitlines():
            if ":" in line and "#" in line:
                name = line.split(":", 1)[0].strip()
                notes[f"{sec}.{name}"] = line.split("#", 1)[1].strip()
    out = ["# fedpois experiment defaults (flat section.key = value)"]
    for line in serialize(ExperimentConfig()).splitlines():
        key = line.split("=", 1)[0].strip()
        out.append(f"{line}  # {notes[key]}" if key in notes else line)
    return "\n".join(out) + "\n"
