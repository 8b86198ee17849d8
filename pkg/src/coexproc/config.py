"""Run configuration.

The config file is a flat list of ``dotted.key = value`` lines where each
value is a JSON literal (``1.5``, ``true``, ``"annual"``, ``[-1, 1, 3]``,
``null``).  Blank lines and lines starting with ``#`` are ignored.  Keys map
onto the nested dataclasses below, e.g.::

    field.alpha2 = 1.0
    field.wendland.c = 0.92
    process.spline.knots = [-1, 1, 3]
    sample.count = 24

Unknown keys are rejected before any computation starts.  Relative input
paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SchemaError


@dataclass
class WendlandBlock:
    kappa2: float = 1.61
    c: float = 0.92
    tau: float = 6.0


@dataclass
class FieldConfig:
    alpha2: float = 1.0
    temporal: str = "ones"
    dist_scale: float = 1.0
    wendland: WendlandBlock = field(default_factory=WendlandBlock)


@dataclass
class SplineConfig:
    order: int = 3
    knots: list = field(default_factory=lambda: [-1.0, 1.0, 3.0])
    boundary: list = field(default_factory=lambda: [-2.0, 30.0])
    intercept: bool = True
    fit_rel_tol: float = 1e-3
    monotone: str = "decreasing"


@dataclass
class ResidualConfig:
    sigma2_min: float = 1e-4
    sigma2_max: float = 0.04
    center: float = 1.0
    width: float = 2.0


@dataclass
class ProcessConfig:
    alpha2: float = 1.0
    pca_energy: float = 0.95
    dist_scale: float = 1.0
    wendland: WendlandBlock = field(default_factory=lambda: WendlandBlock(0.3, 4.0, 6.0))
    spline: SplineConfig = field(default_factory=SplineConfig)
    resid: ResidualConfig = field(default_factory=ResidualConfig)


@dataclass
class ExtentConfig:
    sd_min: float = 0.02
    sd_max: float = 0.5
    length: float = 0.1
    dist_scale: float = 1.0
    wendland: WendlandBlock = field(default_factory=lambda: WendlandBlock(1.0, 0.3, 6.0))
    north_month: str = "Feb"
    south_month: str = "Aug"


@dataclass
class PseudoConfig:
    count: int = 10
    latitudes: list = field(default_factory=lambda: [80.0, -80.0])
    value: float = -1.92
    sd: float = 0.25
    season: str = "annual"


@dataclass
class BiasConfig:
    blocks: dict = field(default_factory=lambda: {"nordic": 2.0})
    auto_nordic: bool = True
    nordic_lat_min: float = 62.0
    nordic_lon_window: list = field(default_factory=lambda: [-180.0, 180.0])
    neighbours: int = 4


@dataclass
class SampleConfig:
    count: int = 0
    bound: float = 3.0
    seed: int = 0
    scalar_z: bool = False
    in_box: bool = True


@dataclass
class ToleranceConfig:
    pinv_rel_tol: float = None
    cond_warn: float = 1e12
    invariance: float = 1e-10


@dataclass
class InputConfig:
    sst: str = ""
    sic: str = ""
    observations: str = ""
    extents: str = ""


@dataclass
class DiagnoseConfig:
    locations: list = field(default_factory=list)
    sst_range: list = field(default_factory=lambda: [-2.0, 30.0])
    points: int = 33


@dataclass
class OutputConfig:
    dir: str = "out"


@dataclass
class RunConfig:
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    process: ProcessConfig = dataclasses.field(default_factory=ProcessConfig)
    extent: ExtentConfig = dataclasses.field(default_factory=ExtentConfig)
    pseudo: PseudoConfig = dataclasses.field(default_factory=PseudoConfig)
    bias: BiasConfig = dataclasses.field(default_factory=BiasConfig)
    sample: SampleConfig = dataclasses.field(default_factory=SampleConfig)
    tolerance: ToleranceConfig = dataclasses.field(default_factory=ToleranceConfig)
    inputs: InputConfig = dataclasses.field(default_factory=InputConfig)
    diagnose: DiagnoseConfig = dataclasses.field(default_factory=DiagnoseConfig)
    output: OutputConfig = dataclasses.field(default_factory=OutputConfig)

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        """SHA-256 of the canonical JSON form, ignoring file locations."""
        body = self.to_dict()
        body.pop("inputs")
        body.pop("output")
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _assign(obj, path, value, key):
    head, *rest = path
    names = {f.name: f for f in dataclasses.fields(obj)}
    if head not in names:
        raise SchemaError(f"unknown config key {key!r}")
    current = getattr(obj, head)
    if rest:
        if not dataclasses.is_dataclass(current):
            raise SchemaError(f"unknown config key {key!r}")
        _assign(current, rest, value, key)
        return
    if dataclasses.is_dataclass(current):
        raise SchemaError(f"config key {key!r} names a section, not a value")
    setattr(obj, head, _coerce(current, value, key))


def _coerce(current, value, key):
    if value is None:
        return None
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise SchemaError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float) or current is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, str) and not isinstance(value, str):
        raise SchemaError(f"{key}: expected a string, got {value!r}")
    if isinstance(current, list) and not isinstance(value, list):
        raise SchemaError(f"{key}: expected a list, got {value!r}")
    if isinstance(current, dict) and not isinstance(value, dict):
        raise SchemaError(f"{key}: expected an object, got {value!r}")
    return value


def validate(cfg):
    """Range checks; raises :class:`SchemaError` on the first violation."""
    checks = [
        (cfg.field.alpha2 > 0, "field.alpha2 must be positive"),
        (cfg.process.alpha2 > 0, "process.alpha2 must be positive"),
        (cfg.field.temporal in ("ones", "free"), "field.temporal must be 'ones' or 'free'"),
        (0 < cfg.process.pca_energy <= 1, "process.pca_energy must lie in (0, 1]"),
        (cfg.process.spline.order >= 2, "process.spline.order must be >= 2"),
        (len(cfg.process.spline.boundary) == 2, "process.spline.boundary needs two values"),
        (cfg.process.spline.monotone in (None, "increasing", "decreasing"),
         "process.spline.monotone must be null, 'increasing' or 'decreasing'"),
        (0 <= cfg.process.spline.fit_rel_tol < 1, "process.spline.fit_rel_tol must lie in [0, 1)"),
        (cfg.extent.sd_max >= cfg.extent.sd_min > 0, "need extent.sd_max >= extent.sd_min > 0"),
        (cfg.extent.length > 0, "extent.length must be positive"),
        (cfg.pseudo.count >= 0, "pseudo.count must be >= 0"),
        (cfg.pseudo.sd > 0, "pseudo.sd must be positive"),
        (cfg.sample.count >= 0, "sample.count must be >= 0"),
        (cfg.sample.bound >= 0, "sample.bound must be >= 0"),
        (cfg.tolerance.cond_warn > 1, "tolerance.cond_warn must exceed 1"),
        (cfg.bias.neighbours >= 1, "bias.neighbours must be >= 1"),
        (cfg.diagnose.points >= 2, "diagnose.points must be >= 2"),
    ]
    for block in (cfg.field.wendland, cfg.process.wendland, cfg.extent.wendland):
        checks.append((block.kappa2 > 0 and block.c > 0 and block.tau >= 6, "wendland blocks need kappa2 > 0, c > 0, tau >= 6"))
    for ok, msg in checks:
        if not ok:
            raise SchemaError(msg)
    return cfg


def parse_config(text, base_dir=None):
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise SchemaError(f"config line {lineno}: expected 'key = value'")
        try:
            parsed = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config line {lineno}: value for {key!r} is not a JSON literal ({exc.msg})") from None
        _assign(cfg, key.split("."), parsed, key)
    if base_dir is not None:
        for name in ("sst", "sic", "observations", "extents"):
            value = getattr(cfg.inputs, name)
            if value and not Path(value).is_absolute():
                setattr(cfg.inputs, name, str(Path(base_dir) / value))
    return validate(cfg)


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.resolve().parent)


def dump_config(cfg):
    """Inverse of :func:`parse_config` (one line per leaf key)."""
    lines = []

    def walk(prefix, obj):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(value):
                walk(key + ".", value)
            else:
                lines.append(f"{key} = {json.dumps(value)}")

    walk("", cfg)
    return "\n".join(lines) + "\n"
