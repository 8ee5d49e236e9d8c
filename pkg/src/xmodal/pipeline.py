"""Pipeline configuration, stage-wise training and bundle evaluation.

Config files are TOML.  Top-level keys: ``seed``, ``stage``,
``output_dir``.  Tables: ``[data]`` (``format``, ``train_a``, ``train_b``),
``[synth]`` (a :class:`SynthConfig` plus ``train_fraction``; used when no
data paths are given), ``[cca]``, ``[train]`` (a :class:`TrainConfig` plus
``pairing`` and ``max_pairs_per_class``), ``[tnn]`` and ``[eval]``
(``metric``, ``relevance``).  The top-level seed feeds every stochastic
component, so sections take no seed of their own.  Relative paths resolve
against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bundle import ModelBundle
from .cca import CcaConfig, CcaModel, fit_cca, project
from .dataio import PairedDataset, SynthConfig, generate_synthetic, load_features, split
from .deepnet import PAIRING_MODES, DccaModel, TrainConfig, embed, fit_sdcca, train_dcca
from .errors import DataError, InvalidConfig
from .retrieval import METRICS, RELEVANCE, evaluate
from .triplet import TnnConfig, TnnModel, refine, train_tnn

STAGES = ("cca", "dcca", "sdcca", "sdcca+tnn")


@dataclass(frozen=True)
class DataConfig:
    format: str = "xmf"
    train_a: str = ""
    train_b: str = ""


@dataclass(frozen=True)
class SynthSection(SynthConfig):
    train_fraction: float = 0.8


@dataclass(frozen=True)
class PairingConfig:
    pairing: str = "fullcross"
    max_pairs_per_class: int = 256


@dataclass(frozen=True)
class EvalConfig:
    metric: str = "cosine"
    relevance: str = "class"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    stage: str = "cca"
    output_dir: str = "out"
    data: DataConfig | None = None
    synth: SynthSection | None = None
    cca: CcaConfig = field(default_factory=CcaConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pairing: PairingConfig = field(default_factory=PairingConfig)
    tnn: TnnConfig = field(default_factory=TnnConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        """Plain-JSON view; what the bundle manifest stores and hashes."""
        def conv(v):
            if dataclasses.is_dataclass(v):
                return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
            if isinstance(v, tuple):
                return [conv(x) for x in v]
            return v
        return conv(self)


# --------------------------------------------------------------------------
# config loading

# [train] is handled separately: it splits into TrainConfig and PairingConfig
_TABLES = {
    "data": DataConfig,
    "synth": SynthSection,
    "cca": CcaConfig,
    "tnn": TnnConfig,
    "eval": EvalConfig,
}
_TOP_LEVEL = {"seed": int, "stage": str, "output_dir": str}
_SEEDED = ("seed",)


def _key_lines(text: str) -> dict:
    """Map ``(table, key)`` to its 1-based line number in a TOML text."""
    lines, table = {}, ""
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if m:
            table = m.group(1)
            lines.setdefault((table, ""), no)
            continue
        m = re.match(r"^([A-Za-z0-9_.-]+)\s*=", line)
        if m:
            lines.setdefault((table, m.group(1)), no)
    return lines


class _Locator:
    def __init__(self, source: str, text: str):
        self.source = source
        self.lines = _key_lines(text)

    def error(self, table: str, key: str, msg: str) -> InvalidConfig:
        line = (self.lines.get((table, key)) or self.lines.get((key, "") if not table else None)
                or self.lines.get((table, "")))
        where = f"{self.source}:{line}" if line else self.source
        name = f"{table}.{key}" if table else key
        return InvalidConfig(f"{where}: {name}: {msg}")


def _coerce(value, default, what: str):
    """Check a TOML value against the type of the dataclass default."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool)
                                             for v in value)
        value = tuple(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise TypeError(f"expected {type(default).__name__}, got {what}")
    return value


def _build(cls, raw: dict, table: str, loc: _Locator, skip=()):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)} - set(skip)
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise loc.error(table, key, "unknown key")
        try:
            kwargs[key] = _coerce(value, getattr(defaults, key), repr(value))
        except TypeError as exc:
            raise loc.error(table, key, str(exc)) from None
    return cls(**kwargs)


def _parse_override(item: str):
    if "=" not in item:
        raise InvalidConfig(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return key.strip().split("."), parsed


def parse_config(text: str, source: str = "<config>", overrides=(), base_dir=None) -> PipelineConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"\(at line (\d+), column \d+\)", str(exc))
        where = f"{source}:{m.group(1)}" if m else source
        raise InvalidConfig(f"{where}: {exc}") from None
    for item in overrides:
        path, value = _parse_override(item)
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise InvalidConfig(f"override {item!r}: {part} is not a table")
        node[path[-1]] = value
    loc = _Locator(source, text)

    top = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in _TABLES and key != "train":
                raise loc.error("", key, "unknown table")
            continue
        if key not in _TOP_LEVEL:
            raise loc.error("", key, "unknown key")
        if not isinstance(value, _TOP_LEVEL[key]) or isinstance(value, bool):
            raise loc.error("", key, f"expected {_TOP_LEVEL[key].__name__}, got {value!r}")
        top[key] = value

    seed = top.get("seed", 0)
    stage = top.get("stage", "cca")
    if stage not in STAGES:
        raise loc.error("", "stage", f"must be one of {', '.join(STAGES)}")

    sections = {}
    for table, cls in _TABLES.items():
        if table in raw:
            sections[table] = _build(cls, raw[table], table, loc, skip=_SEEDED)
    train_raw = dict(raw.get("train", {}))
    pairing_raw = {k: train_raw.pop(k) for k in ("pairing", "max_pairs_per_class")
                   if k in train_raw}
    train = _build(TrainConfig, train_raw, "train", loc, skip=_SEEDED)
    pairing = _build(PairingConfig, pairing_raw, "train", loc)
    if pairing.pairing not in PAIRING_MODES:
        raise loc.error("train", "pairing", f"must be one of {', '.join(PAIRING_MODES)}")

    data = sections.get("data")
    synth = sections.get("synth")
    if data is None and synth is None:
        raise loc.error("", "", "need a [data] or a [synth] table")
    if data is not None:
        if data.format not in ("xmf", "csv"):
            raise loc.error("data", "format", "must be xmf or csv")
        if not data.train_a or not data.train_b:
            raise loc.error("data", "", "train_a and train_b are required")
        if base_dir is not None:
            data = dataclasses.replace(
                data,
                train_a=str(Path(base_dir, data.train_a)),
                train_b=str(Path(base_dir, data.train_b)),
            )
    output_dir = top.get("output_dir", "out")
    if base_dir is not None:
        output_dir = str(Path(base_dir, output_dir))

    cfg = PipelineConfig(
        seed=seed,
        stage=stage,
        output_dir=output_dir,
        data=data,
        synth=synth,
        cca=sections.get("cca", CcaConfig()),
        train=dataclasses.replace(train, seed=seed),
        pairing=pairing,
        tnn=dataclasses.replace(sections.get("tnn", TnnConfig()), seed=seed),
        eval=sections.get("eval", EvalConfig()),
    )
    for table, obj in (("cca", cfg.cca), ("train", cfg.train), ("tnn", cfg.tnn)):
        try:
            obj.validate()
        except InvalidConfig as exc:
            raise loc.error(table, "", str(exc)) from None
    if cfg.synth is not None:
        try:
            cfg.synth.validate()
        except InvalidConfig as exc:
            raise loc.error("synth", "", str(exc)) from None
        if not 0 < cfg.synth.train_fraction < 1:
            raise loc.error("synth", "train_fraction", "must be in (0, 1)")
    if cfg.eval.metric not in METRICS:
        raise loc.error("eval", "metric", f"must be one of {', '.join(METRICS)}")
    if cfg.eval.relevance not in RELEVANCE:
        raise loc.error("eval", "relevance", f"must be one of {', '.join(RELEVANCE)}")
    return cfg


def load_config(path, overrides=()) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), overrides, base_dir=Path(path).parent)


# --------------------------------------------------------------------------
# training and evaluation


def load_pair(path_a, path_b, fmt: str = "xmf") -> PairedDataset:
    return PairedDataset(load_features(path_a, fmt), load_features(path_b, fmt))


def training_data(cfg: PipelineConfig):
    """``(train, held_out)``; ``held_out`` is only produced in synth mode."""
    if cfg.data is not None:
        return load_pair(cfg.data.train_a, cfg.data.train_b, cfg.data.format), None
    synth_fields = {f.name for f in dataclasses.fields(SynthConfig)}
    synth = SynthConfig(**{k: getattr(cfg.synth, k) for k in synth_fields})
    ds = generate_synthetic(synth, cfg.seed)
    return split(ds, cfg.synth.train_fraction, cfg.seed)


def train_stage(train: PairedDataset, cfg: PipelineConfig) -> tuple[ModelBundle, dict]:
    """Mean-pool, pair if supervised, run the stage trainers. Returns bundle and trace."""
    train = train.pooled()
    XA, XB = train.a.matrix(), train.b.matrix()
    trace: dict = {"stage": cfg.stage}
    if cfg.stage == "cca":
        model = fit_cca(XA, XB, cfg.cca)
        trace["correlations"] = model.correlations.tolist()
        sections = (model,)
    elif cfg.stage == "dcca":
        model = train_dcca(train, cfg.train)
        sections = (model,)
    else:
        model = fit_sdcca(train, cfg.pairing.pairing, cfg.train, cfg.pairing.max_pairs_per_class)
        sections = (model,)
        if cfg.stage == "sdcca+tnn":
            tnn = train_tnn(embed(model, XA, "A"), embed(model, XB, "B"), train.labels, cfg.tnn)
            trace["tnn"] = [list(t) for t in tnn.training_trace]
            sections = (model, tnn)
    if isinstance(model, DccaModel):
        trace["dcca"] = [list(t) for t in model.training_trace]
        trace["correlations"] = model.cca_head.correlations.tolist()
    return ModelBundle(cfg.stage, sections, cfg.to_dict()), trace


def embed_chain(bundle: ModelBundle, Z, view: str) -> np.ndarray:
    E = np.asarray(Z, dtype=np.float64)
    for section in bundle.sections:
        if isinstance(section, CcaModel):
            E = project(section, E, view)
        elif isinstance(section, DccaModel):
            E = embed(section, E, view)
        elif isinstance(section, TnnModel):
            E = refine(section, E, view)
        else:
            raise DataError(f"unsupported section {type(section).__name__}")
    return E


def evaluate_bundle(bundle: ModelBundle, test: PairedDataset, metric: str = "cosine",
                    relevance: str = "class", workers: int = 1):
    test = test.pooled()
    EA = embed_chain(bundle, test.a.matrix(), "A")
    EB = embed_chain(bundle, test.b.matrix(), "B")
    return evaluate(EA, EB, test.labels, metric=metric, relevance=relevance, workers=workers)


def trace_json(trace: dict) -> str:
    return json.dumps(trace, indent=2, sort_keys=True) + "\n"
