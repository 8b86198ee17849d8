"""Text file formats: ensemble bundles, observation tables, extent tables and
gridded outputs.

Every number is written with 17 significant digits so that a write/read
round trip reproduces float64 values exactly.

Field bundle layout::

    # field: sst
    # units: degC
    # m: 3
    # n: 2
    # p: 16
    # grid: regular 4x4
    # months: Jan;Feb
    member_id,month_index,lat,lon,value
    member1,0,-60,-135,1.25
    ...

``month_index`` is zero-based.  Location order is the order in which
locations first appear in the file.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coex_field import FieldEnsemble
from .errors import ParseError, SchemaError
from .grid import Grid, default_month_labels

BUNDLE_COLUMNS = ("member_id", "month_index", "lat", "lon", "value")
OBS_COLUMNS = ("lat", "lon", "value", "sd", "season_tag")
OBS_OPTIONAL = ("custom_weights", "bias_block", "bias_mean")
EXTENT_COLUMNS = ("lat", "lon", "inside_flag")
SEASON_TAGS = ("annual", "summer", "summer_NH", "summer_SH", "custom")
COORD_TOL = 1e-6


def fmt(x):
    return format(float(x), ".17g")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _number(text, what, line):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"line {line}: {what} {text!r} is not a number") from None
    if not math.isfinite(value):
        raise ParseError(f"line {line}: {what} is not finite ({text!r})")
    return value


def _split_header(path):
    """Header ``# key: value`` lines and the remaining CSV lines (with line numbers)."""
    header, body = {}, []
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if sep:
                    header[key.strip()] = value.strip()
                continue
            body.append((lineno, line))
    return header, body


def _rows(body, columns, optional=(), path=""):
    if not body:
        raise SchemaError(f"{path}: no column header or records")
    names = next(csv.reader([body[0][1]]))
    names = [c.strip() for c in names]
    missing = [c for c in columns if c not in names]
    unknown = [c for c in names if c not in columns and c not in optional]
    if missing or unknown:
        raise SchemaError(f"{path}: expected columns {list(columns)} (+ optional {list(optional)}); "
                          f"missing {missing}, unknown {unknown}")
    if len(body) == 1:
        raise SchemaError(f"{path}: no records")
    for (lineno, line), cells in zip(body[1:], csv.reader([b for _, b in body[1:]])):
        if len(cells) != len(names):
            raise SchemaError(f"{path} line {lineno}: expected {len(names)} cells, got {len(cells)}")
        yield lineno, dict(zip(names, (c.strip() for c in cells)))


@dataclass(frozen=True)
class BundleHeader:
    field: str = "field"
    units: str = ""
    grid: str = ""


def load_field_bundle(path, with_header=False):
    """Read a field bundle into a :class:`FieldEnsemble`.

    The ``m x n x p`` lattice must be complete with no duplicate
    ``(member, month, location)`` keys; header counts, when present, must
    agree with the records.
    """
    path = Path(path)
    header, body = _split_header(path)
    members, locations, cells = {}, {}, {}
    max_month = -1
    for lineno, row in _rows(body, BUNDLE_COLUMNS, path=path):
        mid = row["member_id"]
        if not mid:
            raise SchemaError(f"{path} line {lineno}: empty member_id")
        try:
            t = int(row["month_index"])
        except ValueError:
            raise ParseError(f"{path} line {lineno}: month_index {row['month_index']!r} is not an integer") from None
        if t < 0:
            raise SchemaError(f"{path} line {lineno}: negative month_index")
        lat = _number(row["lat"], "lat", lineno)
        lon = _number(row["lon"], "lon", lineno)
        value = _number(row["value"], "value", lineno)
        loc = (lat, lon)
        members.setdefault(mid, len(members))
        locations.setdefault(loc, len(locations))
        key = (mid, t, loc)
        if key in cells:
            raise SchemaError(f"{path} line {lineno}: duplicate record member={mid} month={t} lat={lat} lon={lon}")
        cells[key] = value
        max_month = max(max_month, t)
    m, n, p = len(members), max_month + 1, len(locations)
    for name, count in (("m", m), ("n", n), ("p", p)):
        if name in header and int(header[name]) != count:
            raise SchemaError(f"{path}: header {name}={header[name]} but records imply {count}")
    X = np.empty((m, n * p))
    for mid, i in members.items():
        for t in range(n):
            for loc, s in locations.items():
                try:
                    X[i, t * p + s] = cells[(mid, t, loc)]
                except KeyError:
                    raise SchemaError(f"{path}: missing cell member={mid} month={t} lat={loc[0]} lon={loc[1]}") from None
    locs = np.array(list(locations.keys()))
    grid = Grid(locs[:, 0], locs[:, 1])
    months = tuple(header["months"].split(";")) if header.get("months") else default_month_labels(n)
    if len(months) != n:
        raise SchemaError(f"{path}: {len(months)} month labels for {n} months")
    ens = FieldEnsemble(X, n, grid, tuple(members.keys()), months)
    if with_header:
        return ens, BundleHeader(header.get("field", "field"), header.get("units", ""), header.get("grid", ""))
    return ens


def write_field_bundle(path, ensemble, field="field", units="", grid_desc="", extra=None):
    """Write ``ensemble`` in the bundle format (17 significant digits)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    e = ensemble
    lats, lons = e.grid.lats, e.grid.lons
    lines = [f"# field: {field}", f"# units: {units}", f"# m: {e.m}", f"# n: {e.n}", f"# p: {e.p}",
             f"# grid: {grid_desc or f'points p={e.p}'}", f"# months: {';'.join(e.month_labels)}"]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append(",".join(BUNDLE_COLUMNS))
    for i, label in enumerate(e.labels):
        for t in range(e.n):
            row = e.members[i, t * e.p:(t + 1) * e.p]
            for s in range(e.p):
                lines.append(f"{label},{t},{fmt(lats[s])},{fmt(lons[s])},{fmt(row[s])}")
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass(frozen=True)
class ObservationRecords:
    """Parsed observation table; turned into weights once a grid is known."""

    lats: np.ndarray
    lons: np.ndarray
    values: np.ndarray
    sds: np.ndarray
    seasons: tuple
    custom_weights: tuple
    bias_blocks: tuple
    bias_means: np.ndarray

    @property
    def d(self):
        return self.values.size


def load_observation_table(path):
    """Read ``lat,lon,value,sd,season_tag[,custom_weights][,bias_block][,bias_mean]``.

    ``custom_weights`` is a ``;``-separated list of monthly weights used
    when ``season_tag`` is ``custom``.  Empty optional cells mean "none".
    """
    path = Path(path)
    _, body = _split_header(path)
    cols = {k: [] for k in ("lat", "lon", "value", "sd", "season", "custom", "block", "bias")}
    for lineno, row in _rows(body, OBS_COLUMNS, OBS_OPTIONAL, path):
        lat = _number(row["lat"], "lat", lineno)
        lon = _number(row["lon"], "lon", lineno)
        if not -90.0 <= lat <= 90.0 or not -180.0 <= lon < 180.0:
            raise SchemaError(f"{path} line {lineno}: location ({lat}, {lon}) out of range")
        sd = _number(row["sd"], "sd", lineno)
        if sd <= 0:
            raise SchemaError(f"{path} line {lineno}: sd must be positive")
        tag = row["season_tag"]
        if tag not in SEASON_TAGS:
            raise SchemaError(f"{path} line {lineno}: unknown season_tag {tag!r}")
        custom = row.get("custom_weights", "")
        weights = tuple(_number(w, "custom weight", lineno) for w in custom.split(";")) if custom else None
        if tag == "custom" and weights is None:
            raise SchemaError(f"{path} line {lineno}: custom season needs custom_weights")
        bias = row.get("bias_mean", "")
        cols["lat"].append(lat)
        cols["lon"].append(lon)
        cols["value"].append(_number(row["value"], "value", lineno))
        cols["sd"].append(sd)
        cols["season"].append(tag)
        cols["custom"].append(weights)
        cols["block"].append(row.get("bias_block", "") or None)
        cols["bias"].append(_number(bias, "bias_mean", lineno) if bias else np.nan)
    return ObservationRecords(np.array(cols["lat"]), np.array(cols["lon"]), np.array(cols["value"]),
                              np.array(cols["sd"]), tuple(cols["season"]), tuple(cols["custom"]),
                              tuple(cols["block"]), np.array(cols["bias"]))


def write_observation_table(path, records):
    lines = [",".join(OBS_COLUMNS + OBS_OPTIONAL)]
    for i in range(records.d):
        cw = records.custom_weights[i]
        bias = records.bias_means[i]
        lines.append(",".join([
            fmt(records.lats[i]), fmt(records.lons[i]), fmt(records.values[i]), fmt(records.sds[i]),
            records.seasons[i], ";".join(fmt(w) for w in cw) if cw else "",
            records.bias_blocks[i] or "", "" if np.isnan(bias) else fmt(bias),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def load_extent_table(path, grid):
    """Inside-extent flags ordered as ``grid``; every grid node must be covered."""
    path = Path(path)
    _, body = _split_header(path)
    flags = {}
    for lineno, row in _rows(body, EXTENT_COLUMNS, path=path):
        lat = _number(row["lat"], "lat", lineno)
        lon = _number(row["lon"], "lon", lineno)
        if row["inside_flag"] not in ("0", "1"):
            raise SchemaError(f"{path} line {lineno}: inside_flag must be 0 or 1")
        key = (lat, lon)
        if key in flags:
            raise SchemaError(f"{path} line {lineno}: duplicate location ({lat}, {lon})")
        flags[key] = float(row["inside_flag"])
    locs = np.array(list(flags.keys()))
    vals = np.array(list(flags.values()))
    out = np.empty(grid.p)
    for s, (la, lo) in enumerate(zip(grid.lats, grid.lons)):
        hit = np.flatnonzero((np.abs(locs[:, 0] - la) <= COORD_TOL) & (np.abs(locs[:, 1] - lo) <= COORD_TOL))
        if hit.size == 0:
            raise SchemaError(f"{path}: no extent flag for grid node ({la}, {lo})")
        out[s] = vals[hit[0]]
    return out


def write_extent_table(path, grid, indicator):
    lines = [",".join(EXTENT_COLUMNS)]
    lines += [f"{fmt(la)},{fmt(lo)},{int(z)}" for la, lo, z in zip(grid.lats, grid.lons, indicator)]
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def write_grid_csv(path, grid, columns):
    """One row per location: ``lat, lon`` then the named columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    lines = [",".join(["lat", "lon"] + names)]
    arrays = [np.asarray(columns[k]).reshape(-1) for k in names]
    for s in range(grid.p):
        lines.append(",".join([fmt(grid.lats[s]), fmt(grid.lons[s])] + [fmt(a[s]) for a in arrays]))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_table(path, header, rows):
    """Plain CSV; floats use 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    path.write_text("\n".join(out) + "\n")
    return path


def read_table(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]
