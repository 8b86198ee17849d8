"""Spatial grid metadata, month labels and interpolation weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .linalg import check_location, distance_matrix

MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
SUMMER_NH = ("Jul", "Aug", "Sep")
SUMMER_SH = ("Jan", "Feb", "Mar")


def canonical_month(label):
    key = str(label).strip()[:3].title()
    if key not in MONTHS:
        raise InvalidInputError(f"unknown month label {label!r}")
    return key


def default_month_labels(n):
    if n == 12:
        return MONTHS
    return tuple(f"M{t + 1:02d}" for t in range(n))


@dataclass(frozen=True)
class Grid:
    """Ordered set of ``p`` locations (degrees)."""

    lats: np.ndarray
    lons: np.ndarray

    def __post_init__(self):
        lats = np.atleast_1d(np.asarray(self.lats, dtype=float))
        lons = np.atleast_1d(np.asarray(self.lons, dtype=float))
        if lats.shape != lons.shape or lats.ndim != 1:
            raise InvalidInputError("lats and lons must be 1-D and of equal length")
        check_location(lats, lons)
        lats.setflags(write=False)
        lons.setflags(write=False)
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)

    @property
    def p(self):
        return self.lats.size

    def distances(self):
        return distance_matrix(self.lats, self.lons)

    def distances_to(self, lats, lons):
        """Great-circle distances, shape ``(len(lats), p)``."""
        return distance_matrix(np.atleast_1d(lats), np.atleast_1d(lons), self.lats, self.lons)

    def interp_weights(self, lat, lon, neighbours=4, snap=1e-9):
        """Inverse-distance weights over the nearest grid nodes, summing to one.

        A point within ``snap`` radians of a node takes that node's value.
        """
        d = self.distances_to(lat, lon)[0]
        w = np.zeros(self.p)
        nearest = np.argsort(d, kind="stable")[: max(1, min(neighbours, self.p))]
        if d[nearest[0]] <= snap:
            w[nearest[0]] = 1.0
            return w
        inv = 1.0 / d[nearest]
        w[nearest] = inv / inv.sum()
        return w

    def hemisphere(self):
        """``'N'`` for latitude >= 0, else ``'S'``."""
        return np.where(self.lats >= 0.0, "N", "S")


def regular_grid(n_lat, n_lon, lat_range=(-80.0, 80.0)):
    """A simple lat-lon lattice, mainly for fixtures and synthetic worlds."""
    lat = np.linspace(lat_range[0], lat_range[1], n_lat)
    lon = -180.0 + (np.arange(n_lon) + 0.5) * 360.0 / n_lon
    LA, LO = np.meshgrid(lat, lon, indexing="ij")
    return Grid(LA.reshape(-1), LO.reshape(-1))


def season_weights(tag, month_labels, lat=0.0, custom=None):
    """Time-averaging weights (length ``n``, summing to one) for a season tag.

    ``summer`` picks the hemisphere from ``lat``; the named summers use
    whichever of their months are present in ``month_labels``.
    """
    n = len(month_labels)
    tag = str(tag).strip()
    if tag == "annual":
        return np.full(n, 1.0 / n)
    if tag == "custom":
        if custom is None:
            raise InvalidInputError("custom season needs explicit weights")
        w = np.asarray(custom, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
            raise InvalidInputError(f"custom weights must be {n} nonnegative values with positive sum")
        return w / w.sum()
    if tag == "summer":
        tag = "summer_NH" if lat >= 0 else "summer_SH"
    if tag not in ("summer_NH", "summer_SH"):
        raise InvalidInputError(f"unknown season tag {tag!r}")
    wanted = SUMMER_NH if tag == "summer_NH" else SUMMER_SH
    present = []
    for t, label in enumerate(month_labels):
        try:
            if canonical_month(label) in wanted:
                present.append(t)
        except InvalidInputError:
            continue
    if not present:
        raise InvalidInputError(f"no {tag} months among labels {list(month_labels)}")
    w = np.zeros(n)
    w[present] = 1.0 / len(present)
    return w
