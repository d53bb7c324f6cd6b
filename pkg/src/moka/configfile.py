"""Config files: flat TOML key/value pairs plus repeated ``[[pair]]`` tables.

Training config::

    task = "planted"          # planted | frozen_linear | toy_attention
    eta = 0.05
    steps = 5000
    full_batch = true
    m = 16
    n = 16

    [[pair]]
    a = [4, 4]                # rows, cols of A
    b = [4, 4]
    identity_a = false
    projection = "delta"      # "q" / "v" for toy_attention

Shape config (``count --model PATH``) uses ``model_name``, ``variant``,
``layer_count``, repeated ``[[projection]]`` tables with ``name``, ``m``, ``n``,
and ``[[pair]]`` tables tagged with their ``projection``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from moka.adapter import PairShape
from moka.shapes import ProjectionSpec, ShapeConfig, validate_config

TASKS = ("planted", "frozen_linear", "toy_attention")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PairEntry:
    a: tuple[int, int]
    b: tuple[int, int]
    identity_a: bool = False
    projection: str = "delta"

    def shape(self) -> PairShape:
        return PairShape(self.a[0], self.a[1], self.b[0], self.b[1], self.identity_a)


@dataclass(frozen=True)
class TrainRunConfig:
    task: str
    eta: float
    steps: int
    batch_size: int = 32
    seed: int = 0
    record_every: int = 1
    full_batch: bool = False
    reproducible: bool = True
    gated: bool = True
    m: int = 0
    n: int = 0
    num_probes: int = 256
    target_scale: float = 1.0
    rho: float = 1.0
    loss_min_steps: int = 0
    seq_len: int = 4
    model_dim: int = 8
    num_sequences: int = 16
    pairs: tuple[PairEntry, ...] = field(default_factory=tuple)

    def shape_config(self) -> ShapeConfig:
        if self.task == "toy_attention":
            projections = tuple(
                ProjectionSpec(
                    name,
                    self.model_dim,
                    self.model_dim,
                    tuple(p.shape() for p in self.pairs if p.projection == name),
                )
                for name in ("q", "v")
            )
        else:
            projections = (ProjectionSpec("delta", self.m, self.n, tuple(p.shape() for p in self.pairs)),)
        return ShapeConfig("custom", "moka", 1, projections)


_FLOAT = (int, float)


def _check_type(key, value, kind):
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, _FLOAT) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"key {key!r}: expected {kind.__name__}, got {value!r}")
    return float(value) if kind is float else value


def _load_toml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_dims(key, value):
    if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
        raise ConfigError(f"key {key!r}: expected [rows, cols] integers, got {value!r}")
    if min(value) < 1:
        raise ConfigError(f"key {key!r}: dims must be >= 1, got {value!r}")
    return (value[0], value[1])


def _parse_pairs(raw, default_projection="delta") -> tuple[PairEntry, ...]:
    if not isinstance(raw, list):
        raise ConfigError("'pair' must be an array of tables ([[pair]])")
    out = []
    for i, table in enumerate(raw):
        unknown = set(table) - {"a", "b", "identity_a", "projection"}
        if unknown:
            raise ConfigError(f"pair {i}: unknown key(s) {sorted(unknown)}")
        for key in ("a", "b"):
            if key not in table:
                raise ConfigError(f"pair {i}: missing key {key!r}")
        entry = PairEntry(
            _parse_dims(f"pair[{i}].a", table["a"]),
            _parse_dims(f"pair[{i}].b", table["b"]),
            _check_type(f"pair[{i}].identity_a", table.get("identity_a", False), bool),
            _check_type(f"pair[{i}].projection", table.get("projection", default_projection), str),
        )
        if entry.identity_a and entry.a[0] != entry.a[1]:
            raise ConfigError(f"pair {i}: identity_a needs a square A, got {list(entry.a)}")
        out.append(entry)
    return tuple(out)


_TRAIN_TYPES = {f.name: f.type for f in fields(TrainRunConfig)}
_KINDS = {"str": str, "float": float, "int": int, "bool": bool}


def train_config_from_dict(raw: dict) -> TrainRunConfig:
    unknown = set(raw) - set(_TRAIN_TYPES)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}")
    for key in ("task", "eta", "steps"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    values = {}
    for key, value in raw.items():
        if key == "pairs":
            continue
        values[key] = _check_type(key, value, _KINDS[_TRAIN_TYPES[key]])
    if "pairs" in raw:
        values["pairs"] = _parse_pairs(raw["pairs"])
    cfg = TrainRunConfig(**values)
    _validate_train(cfg)
    return cfg


def _validate_train(cfg: TrainRunConfig) -> None:
    if cfg.task not in TASKS:
        raise ConfigError(f"key 'task': expected one of {TASKS}, got {cfg.task!r}")
    if not cfg.eta > 0:
        raise ConfigError(f"key 'eta': must be > 0, got {cfg.eta}")
    for key in ("steps", "batch_size", "record_every", "num_probes", "seq_len", "model_dim", "num_sequences"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"key {key!r}: must be >= 1, got {getattr(cfg, key)}")
    if cfg.rho < 0:
        raise ConfigError(f"key 'rho': must be >= 0, got {cfg.rho}")
    if cfg.loss_min_steps < 0:
        raise ConfigError(f"key 'loss_min_steps': must be >= 0, got {cfg.loss_min_steps}")
    if cfg.task != "toy_attention" and (cfg.m < 1 or cfg.n < 1):
        raise ConfigError(f"keys 'm' and 'n' must be >= 1 for task {cfg.task!r}")
    if not cfg.pairs:
        raise ConfigError("at least one [[pair]] table is required")
    allowed = ("q", "v") if cfg.task == "toy_attention" else ("delta",)
    for i, p in enumerate(cfg.pairs):
        if p.projection not in allowed:
            raise ConfigError(f"pair {i}: projection must be one of {allowed}, got {p.projection!r}")
    problems = validate_config(cfg.shape_config())
    if problems:
        raise ConfigError("; ".join(map(str, problems)))


def load_train_config(path) -> TrainRunConfig:
    raw = _load_toml(path)
    if "pair" in raw:
        raw["pairs"] = raw.pop("pair")
    return train_config_from_dict(raw)


def dump_train_config(cfg: TrainRunConfig) -> str:
    d = asdict(cfg)
    pairs = d.pop("pairs")
    d["pair"] = [
        {"a": list(p["a"]), "b": list(p["b"]), "identity_a": p["identity_a"], "projection": p["projection"]}
        for p in pairs
    ]
    return tomli_w.dumps(d)


def parse_train_config_text(text: str) -> TrainRunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from None
    if "pair" in raw:
        raw["pairs"] = raw.pop("pair")
    return train_config_from_dict(raw)


def load_shape_config(path) -> ShapeConfig:
    raw = _load_toml(path)
    unknown = set(raw) - {"model_name", "variant", "layer_count", "projection", "pair"}
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}")
    layer_count = _check_type("layer_count", raw.get("layer_count", 1), int)
    projections = []
    pairs = _parse_pairs(raw.get("pair", []), default_projection="")
    for i, table in enumerate(raw.get("projection", [])):
        unknown = set(table) - {"name", "m", "n"}
        if unknown:
            raise ConfigError(f"projection {i}: unknown key(s) {sorted(unknown)}")
        name = _check_type(f"projection[{i}].name", table.get("name"), str)
        m = _check_type(f"projection[{i}].m", table.get("m"), int)
        n = _check_type(f"projection[{i}].n", table.get("n"), int)
        projections.append(ProjectionSpec(name, m, n, tuple(p.shape() for p in pairs if p.projection == name)))
    if not projections:
        raise ConfigError("at least one [[projection]] table is required")
    names = {p.name for p in projections}
    stray = [i for i, p in enumerate(pairs) if p.projection not in names]
    if stray:
        raise ConfigError(f"pair(s) {stray} name no declared projection")
    return ShapeConfig(
        _check_type("model_name", raw.get("model_name", "custom"), str),
        _check_type("variant", raw.get("variant", "moka"), str),
        layer_count,
        tuple(projections),
    )
