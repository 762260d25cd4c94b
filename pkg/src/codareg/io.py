"""CSV ingestion, run configuration and run manifests."""

import configparser
import csv
from dataclasses import MISSING, asdict, dataclass, field, fields
import datetime as _dt
import hashlib
import json
import math
from pathlib import Path
import platform

import numpy as np

from .model import CoDaTable
from .validation import CompositionError, encode_groups, replace_zeros

__all__ = [
    "IngestionError",
    "RunConfig",
    "load_config",
    "ingest_csv",
    "RunManifest",
    "file_digest",
    "INGEST_SUM_TOL",
]

INGEST_SUM_TOL = 1e-6
_SECTION = "run"


class IngestionError(ValueError):
    """Input file or configuration cannot be turned into a data table.

    ``line`` is the 1-based line number in the file (header is line 1) and
    ``column`` the column name, when known.
    """

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


def _split_list(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def _parse_bool(value):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass
class RunConfig:
    """Model, data and sampler settings of one run.

    Read from a plain ``key = value`` file; lists are comma separated.
    ``components`` empty means every column not used as covariate or group.
    """

    components: list = field(default_factory=list)
    reference: str = "auto"
    mean_columns: list = field(default_factory=list)
    precision_columns: list = field(default_factory=list)
    group_column: str = ""
    prior_scale_beta: float = 5.0
    prior_scale_theta: float = 5.0
    hyper_scale: float = 2.5
    zero_adjust: bool = False
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    init_jitter: float = 2.0
    implementation: str = "loop"
    threads: int = 1

    def __post_init__(self):
        ref = str(self.reference).strip()
        if ref != "auto":
            try:
                if int(ref) < 0:
                    raise ValueError
            except ValueError:
                if ref not in self.components:
                    raise ValueError(
                        f"reference must be 'auto', a 0-based index or a component name, got {ref!r}"
                    ) from None
        self.reference = ref
        if self.implementation not in ("loop", "vectorized"):
            raise ValueError(f"implementation must be 'loop' or 'vectorized', got {self.implementation!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values (config file) or typed values (JSON)."""
        kinds = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            key = key.strip().replace("-", "_")
            if key not in kinds:
                raise ValueError(f"unknown configuration key {key!r}")
            f = kinds[key]
            default = f.default if f.default is not MISSING else f.default_factory()
            if not isinstance(value, str):
                kwargs[key] = value
            elif isinstance(default, list):
                kwargs[key] = _split_list(value)
            elif isinstance(default, bool):
                kwargs[key] = _parse_bool(value)
            elif isinstance(default, int):
                kwargs[key] = int(value)
            elif isinstance(default, float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value.strip()
        return cls(**kwargs)

    def with_overrides(self, **overrides):
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**d)


def load_config(path):
    """Read a run configuration.

    ``*.json`` files may be a plain mapping or a run manifest (its
    ``config`` entry is used). Anything else is ``key = value`` text with
    ``#`` comments.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read configuration {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            data = json.loads(text)
            return RunConfig.from_mapping(data.get("config", data))
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        parser.read_string(f"[{_SECTION}]\n" + text)
        return RunConfig.from_mapping(dict(parser[_SECTION]))
    except (ValueError, configparser.Error) as exc:
        raise IngestionError(f"invalid configuration {path}: {exc}") from exc


def _to_float(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise IngestionError(f"line {line}, column {column!r}: not a number: {text!r}", line, column) from None
    if not math.isfinite(value):
        raise IngestionError(f"line {line}, column {column!r}: non-finite value {text!r}", line, column)
    return value


def ingest_csv(path, config, levels=None, require_compositions=True):
    """Read and validate a CSV of compositions, covariates and group labels.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV with a header row.
    config : RunConfig
        Names the component, covariate and group columns.
    levels : list, optional
        Known group labels (prediction); other labels are rejected.
    require_compositions : bool
        When False the component columns may be absent (prediction input);
        the returned table then holds the barycentre as placeholder.

    Returns
    -------
    table : CoDaTable
        Rows renormalized to sum to one. Designs carry an intercept column
        followed by the configured covariates.
    components : list of str

    Raises
    ------
    IngestionError
        Missing columns, malformed numbers, row sums off by more than 1e-6,
        zero parts without ``zero_adjust`` or unknown group labels.
    """
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path} is empty") from None
        records = [(i + 2, row) for i, row in enumerate(reader) if any(cell.strip() for cell in row)]
    if len(set(header)) != len(header):
        raise IngestionError(f"duplicate column names in header of {path}", 1)

    used = set(config.mean_columns) | set(config.precision_columns)
    if config.group_column:
        used.add(config.group_column)
    components = list(config.components) or [h for h in header if h not in used]
    needed = list(config.mean_columns) + list(config.precision_columns)
    if config.group_column:
        needed.append(config.group_column)
    has_y = all(c in header for c in components)
    if require_compositions or any(c in header for c in config.components):
        needed += components
        has_y = True
    missing = [c for c in needed if c not in header]
    if missing:
        raise IngestionError(f"{path}: missing column(s) {missing}; header is {header}", 1)
    if has_y and len(components) < 2:
        raise IngestionError(f"need at least 2 component columns, got {components}", 1)
    if not records:
        raise IngestionError(f"{path} has no data rows")

    col = {h: j for j, h in enumerate(header)}
    n = len(records)
    for line, row in records:
        if len(row) != len(header):
            raise IngestionError(f"line {line}: expected {len(header)} fields, got {len(row)}", line)

    def numeric(names):
        out = np.empty((n, len(names)))
        for i, (line, row) in enumerate(records):
            for k, name in enumerate(names):
                out[i, k] = _to_float(row[col[name]].strip(), line, name)
        return out

    if has_y:
        Y = numeric(components)
        for i, (line, _) in enumerate(records):
            neg = np.flatnonzero(Y[i] < 0)
            if neg.size:
                name = components[neg[0]]
                raise IngestionError(f"line {line}, column {name!r}: negative part {Y[i, neg[0]]!r}", line, name)
            s = Y[i].sum()
            if abs(s - 1.0) > INGEST_SUM_TOL:
                raise IngestionError(
                    f"line {line}: parts sum to {s!r}, off by more than {INGEST_SUM_TOL:g}", line
                )
        Y = Y / Y.sum(axis=1, keepdims=True)
        if config.zero_adjust:
            Y = replace_zeros(Y)
        zero = np.argwhere(Y <= 0)
        if zero.size:
            i, k = zero[0]
            line, name = records[i][0], components[k]
            raise IngestionError(
                f"line {line}, column {name!r}: zero part (set zero_adjust = true to shrink zeros away)",
                line,
                name,
            )
    else:
        Y = np.full((n, len(components)), 1.0 / len(components))

    x = np.hstack([np.ones((n, 1)), numeric(config.mean_columns)])
    z = np.hstack([np.ones((n, 1)), numeric(config.precision_columns)])
    if config.group_column:
        labels = [row[col[config.group_column]].strip() for _, row in records]
        if levels is not None:
            known = set(levels)
            for (line, _), label in zip(records, labels):
                if label not in known:
                    raise IngestionError(
                        f"line {line}, column {config.group_column!r}: unknown group label {label!r} "
                        f"(known: {list(levels)})",
                        line,
                        config.group_column,
                    )
        codes, levels = encode_groups(np.array(labels), n, levels)
    else:
        codes, levels = encode_groups(None, n, levels)
    try:
        table = CoDaTable(Y, x, z, codes, len(levels), list(levels))
    except (ValueError, CompositionError) as exc:
        raise IngestionError(str(exc)) from exc
    return table, components


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Everything needed to repeat a run.

    ``started_at`` and ``finished_at`` are the only fields that change when
    a run is repeated.
    """

    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    resolved: dict = field(default_factory=dict)
    version: str = ""
    python: str = field(default_factory=platform.python_version)
    numpy: str = np.__version__
    started_at: str = field(default_factory=_now)
    finished_at: str = ""
    exit_code: int = 0

    TIMESTAMPS = ("started_at", "finished_at")

    def add_input(self, path):
        self.inputs[str(path)] = file_digest(path)

    def write(self, directory):
        self.finished_at = _now()
        path = Path(directory) / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, directory):
        path = Path(directory)
        if path.is_dir():
            path = path / "manifest.json"
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})
