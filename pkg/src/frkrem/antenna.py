"""Horizontal sector antenna pattern.

Angles are compass azimuths in degrees: 0 points north (+y) and angles grow
clockwise (90 is east, +x).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError


@dataclass(frozen=True)
class AntennaSpec:
    site: tuple
    azimuth: float
    psi_3db: float = 65.0
    a_m: float = 30.0

    def __post_init__(self):
        if self.psi_3db <= 0:
            raise InvalidParameterError("psi_3db must be positive")
        if self.a_m <= 0:
            raise InvalidParameterError("a_m must be positive")
        object.__setattr__(self, "site", (float(self.site[0]), float(self.site[1])))
        for name in ("azimuth", "psi_3db", "a_m"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_dict(self):
        return {"site": list(self.site), "azimuth": self.azimuth,
                "psi_3db": self.psi_3db, "a_m": self.a_m}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["site"]), d["azimuth"], d.get("psi_3db", 65.0), d.get("a_m", 30.0))


def bearing(xy, site):
    """Compass bearing (degrees, [0, 360)) from ``site`` to each point."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    dx = xy[:, 0] - site[0]
    dy = xy[:, 1] - site[1]
    return np.mod(np.degrees(np.arctan2(dx, dy)), 360.0)


def off_boresight(xy, site, azimuth):
    """Signed angle in (-180, 180] between the azimuth and the site->point bearing.

    A point on the site itself is taken to be on boresight (0).
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    psi = bearing(xy, site) - azimuth
    psi = 180.0 - np.mod(180.0 - psi, 360.0)
    at_site = (xy[:, 0] == site[0]) & (xy[:, 1] == site[1])
    psi[at_site] = 0.0
    return psi


def antenna_gain(xy, antenna):
    """3GPP-style horizontal gain ``-min(12 (psi/psi_3db)^2, A_m)`` in dB.

    Accepts one ``(x, y)`` location (returns a float) or an ``(n, 2)`` array.
    """
    arr = np.asarray(xy, dtype=np.float64)
    scalar = arr.ndim == 1
    psi = off_boresight(arr.reshape(-1, 2), antenna.site, antenna.azimuth)
    g = -np.minimum(12.0 * (psi / antenna.psi_3db) ** 2, antenna.a_m)
    return float(g[0]) if scalar else g
