"""Configuration, CSV ingestion and segmentation, and the model file.

Configuration files are YAML (JSON is accepted too)::

    k_internal: 2
    n_production: 3
    variables:
      - {name: duration, family: gamma}
      - {name: max_depth, family: gamma}
      - {name: wiggliness, family: zero_inflated_gamma}
    initial: {internal: stationary, production: stationary}
    share_emissions: true
    segmentation: {mode: time_window, column: time, duration: 1h}
    animal_column: animal        # optional

Segmentation modes are ``time_window`` (fixed-duration windows on a numeric
or ISO-8601 time column, each row assigned to the window holding it),
``count`` (consecutive blocks of ``n_obs`` rows) and ``column`` (runs of
equal values in a segment-id column).

The model file is a JSON document tagged ``"schema": "hierhmm-model/1"``;
floats are written with shortest round-trip precision.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import re
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime

import numpy as np
import yaml

from .distributions import FAMILIES, EmissionModel
from .errors import ConfigError, DataValidationError, SchemaError
from .estimation import ModelSpec
from .hier_hmm import HierarchicalModel, SegmentedSeries
from .markov import initial_from_dict

log = logging.getLogger(__name__)

MODEL_SCHEMA = "hierhmm-model/1"
MISSING_TOKENS = {"", "na", "nan", "null", "none"}
TRANSFORMS = ("none", "sqrt")
MODES = ("time_window", "count", "column")

_DURATION_UNITS = {"s": 1.0, "sec": 1.0, "min": 60.0, "m": 60.0, "h": 3600.0, "hr": 3600.0, "d": 86400.0}


def parse_duration(value):
    """Seconds in ``value``: a number, or a string such as ``"1h"`` or ``"90 min"``."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        seconds = float(value)
    else:
        m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+(?:[eE][-+]?\d+)?)\s*([a-zA-Z]*)\s*", str(value))
        if not m or m.group(2).lower() not in _DURATION_UNITS | {"": 1.0}:
            raise ConfigError(f"cannot parse duration {value!r}")
        seconds = float(m.group(1)) * _DURATION_UNITS.get(m.group(2).lower(), 1.0)
    if not seconds > 0:
        raise ConfigError(f"duration must be positive, got {value!r}")
    return seconds


@dataclass(frozen=True)
class VariableConfig:
    name: str
    family: str = "gamma"
    transform: str = "none"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"variable {self.name!r}: unknown family {self.family!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"variable {self.name!r}: unknown transform {self.transform!r}")

    def forward(self, x):
        return np.sqrt(x) if self.transform == "sqrt" else x

    def inverse(self, x):
        return np.square(x) if self.transform == "sqrt" else x


@dataclass(frozen=True)
class SegmentationRule:
    mode: str = "column"
    column: str | None = "segment"
    duration: float | None = None
    n_obs: int | None = None
    #: time_window only: a trailing window with fewer rows than this is dropped
    min_tail: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"segmentation mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "time_window":
            if self.duration is None or not self.column:
                raise ConfigError("time_window segmentation needs 'column' and 'duration'")
            object.__setattr__(self, "duration", parse_duration(self.duration))
        elif self.mode == "count":
            if not isinstance(self.n_obs, int) or self.n_obs < 1:
                raise ConfigError("count segmentation needs a positive integer 'n_obs'")
        elif not self.column:
            raise ConfigError("column segmentation needs 'column'")


@dataclass(frozen=True)
class ModelConfig:
    """Model structure plus how to read data for it."""

    k_internal: int
    n_production: int
    variables: tuple
    segmentation: SegmentationRule = field(default_factory=SegmentationRule)
    internal_initial: object = "stationary"
    production_initial: object = "stationary"
    share_emissions: bool = True
    animal_column: str | None = None
    #: ingest snaps |y| < zero_snap to exactly 0
    zero_snap: float = 0.0

    @property
    def names(self):
        return tuple(v.name for v in self.variables)

    def model_spec(self):
        try:
            return ModelSpec(
                self.k_internal,
                self.n_production,
                self.names,
                tuple(v.family for v in self.variables),
                self.internal_initial,
                self.production_initial,
                self.share_emissions,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        d = asdict(self)
        d["initial"] = {"internal": d.pop("internal_initial"), "production": d.pop("production_initial")}
        for key in ("internal", "production"):
            if isinstance(d["initial"][key], tuple):
                d["initial"][key] = list(d["initial"][key])
        d["variables"] = [dict(v) for v in d["variables"]]
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        try:
            variables = tuple(VariableConfig(**v) for v in d["variables"])
            seg = SegmentationRule(**(d.get("segmentation") or {}))
            init = d.get("initial") or {}
            cfg = cls(
                k_internal=int(d["k_internal"]),
                n_production=int(d["n_production"]),
                variables=variables,
                segmentation=seg,
                internal_initial=_policy(init.get("internal", "stationary")),
                production_initial=_policy(init.get("production", "stationary")),
                share_emissions=bool(d.get("share_emissions", True)),
                animal_column=d.get("animal_column"),
                zero_snap=float(d.get("zero_snap", 0.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad configuration: {exc}") from None
        cfg.model_spec()
        return cfg


def _policy(value):
    return value if isinstance(value, str) else tuple(float(x) for x in value)


def load_config(path):
    try:
        with open(path) as fh:
            d = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ModelConfig.from_dict(d)


def _parse_time(text, line):
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text.strip()).timestamp()
    except ValueError:
        raise DataValidationError(f"line {line}: cannot parse time value {text!r}") from None


def _parse_value(text, line, column):
    if text.strip().lower() in MISSING_TOKENS:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise DataValidationError(f"line {line}: column {column!r}: cannot parse {text!r}") from None
    if not math.isfinite(value):
        raise DataValidationError(f"line {line}: column {column!r}: value {text!r} is not finite")
    return value


def ingest(path, config):
    """Read a delimited file into a :class:`SegmentedSeries`.

    Rows of one animal must be in time order; animals are taken in order of
    first appearance.  Transforms are applied after validation.
    """
    seg = config.segmentation
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = list(config.names)
        if seg.mode in ("time_window", "column"):
            required.append(seg.column)
        if config.animal_column:
            required.append(config.animal_column)
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        rows = list(reader)
    if not rows:
        raise DataValidationError(f"{path}: no data rows")

    lines = np.arange(2, len(rows) + 2)
    values = np.array(
        [[_parse_value(row[name], line, name) for name in config.names] for row, line in zip(rows, lines)]
    )
    offenders = []
    for r, var in enumerate(config.variables):
        if FAMILIES[var.family].nonnegative or var.transform == "sqrt":
            bad = np.flatnonzero(values[:, r] < 0)
            offenders += [f"line {lines[i]}: {var.name}={values[i, r]!r}" for i in bad]
    if offenders:
        shown = "; ".join(offenders[:10]) + (f"; ... ({len(offenders)} total)" if len(offenders) > 10 else "")
        raise DataValidationError(f"negative values for nonnegative variables: {shown}")
    if config.zero_snap > 0:
        values[np.abs(values) < config.zero_snap] = 0.0
    for r, var in enumerate(config.variables):
        values[:, r] = var.forward(values[:, r])

    animals = [row[config.animal_column] for row in rows] if config.animal_column else ["0"] * len(rows)
    order = {}
    for i, a in enumerate(animals):
        order.setdefault(a, []).append(i)

    segments, groups, labels = [], [], []
    for animal, idx in order.items():
        idx = np.array(idx)
        for label, part in _segment(rows, idx, lines, seg):
            segments.append(values[part])
            groups.append(animal)
            labels.append(label)
    if not segments:
        raise DataValidationError(f"{path}: segmentation produced no segments")
    data = SegmentedSeries(segments, config.names, groups, labels)
    log.info(
        "ingested %d rows into %d segments (lengths %d-%d) for %d animal(s)",
        len(rows), data.m_segments, data.lengths.min(), data.lengths.max(), len(order),
    )
    return data


def _segment(rows, idx, lines, rule):
    """Yield ``(label, row indices)`` per segment for one animal's rows ``idx``."""
    if rule.mode == "count":
        for start in range(0, idx.size, rule.n_obs):
            yield start // rule.n_obs + 1, idx[start:start + rule.n_obs]
        return
    if rule.mode == "column":
        keys = [rows[i][rule.column] for i in idx]
        start = 0
        for j in range(1, len(keys) + 1):
            if j == len(keys) or keys[j] != keys[start]:
                yield _label(keys[start]), idx[start:j]
                start = j
        return
    times = np.array([_parse_time(rows[i][rule.column], lines[i]) for i in idx])
    if (np.diff(times) < 0).any():
        i = int(np.flatnonzero(np.diff(times) < 0)[0]) + 1
        raise DataValidationError(f"line {lines[idx[i]]}: time goes backwards within an animal")
    window = np.floor((times - times[0]) / rule.duration).astype(np.int64)
    bounds = np.flatnonzero(np.diff(window)) + 1
    parts = np.split(np.arange(idx.size), bounds)
    if len(parts) > 1 and parts[-1].size < rule.min_tail:
        log.info("dropping trailing window with %d rows", parts[-1].size)
        parts = parts[:-1]
    for part in parts:
        yield float(times[0] + window[part[0]] * rule.duration), idx[part]


def _label(text):
    try:
        return int(text)
    except ValueError:
        return text


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x):
    """Shortest round-trip text for a float; empty string for NaN."""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def csv_text(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def model_to_dict(model, config, fit_info=None):
    d = {
        "schema": MODEL_SCHEMA,
        "config": config.to_dict(),
        "internal": {"tpm": model.internal_tpm.tolist(), "initial": model.internal_initial.to_dict()},
        "production": [
            {"tpm": g.tolist(), "initial": p.to_dict()}
            for g, p in zip(model.production_tpms, model.production_initials)
        ],
        "share_emissions": model.share_emissions,
        "emissions": [e.to_dict() for e in model.emissions],
    }
    if fit_info is not None:
        d["fit"] = fit_info
    return d


def model_from_dict(d):
    if not isinstance(d, dict) or d.get("schema") != MODEL_SCHEMA:
        raise SchemaError(f"not a {MODEL_SCHEMA} document (schema tag {d.get('schema') if isinstance(d, dict) else None!r})")
    try:
        config = ModelConfig.from_dict(d["config"])
        model = HierarchicalModel(
            np.array(d["internal"]["tpm"], dtype=float),
            np.array([p["tpm"] for p in d["production"]], dtype=float),
            tuple(EmissionModel.from_dict(e) for e in d["emissions"]),
            initial_from_dict(d["internal"]["initial"]),
            tuple(initial_from_dict(p["initial"]) for p in d["production"]),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed model file: {exc}") from None
    if model.names != config.names:
        raise SchemaError("model variables do not match its configuration")
    return model, config, d.get("fit")


def save_model(path, model, config, fit_info=None):
    atomic_write(path, json.dumps(model_to_dict(model, config, fit_info), indent=2) + "\n")


def load_model(path):
    """Return ``(model, config, fit_info)`` from a model file."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None
    return model_from_dict(d)
