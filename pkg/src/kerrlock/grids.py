"""Phase-space grid layouts, quadrature weights and the grid dump format.

Dump format (little endian)::

    8 bytes   magic b"KLGRID\\x00\\x01"
    uint32    header length H
    H bytes   UTF-8 JSON header {"layout", "dims", "window", "meta"}
    payload   float64, row-major, shape dims
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CartesianLayout",
    "PolarLayout",
    "GridData",
    "layout_from_dict",
    "save_grid",
    "load_grid",
    "export_csv",
]

MAGIC = b"KLGRID\x00\x01"


@dataclass(frozen=True)
class CartesianLayout:
    """Cell-centred nodes on [x_min, x_max] x [y_min, y_max]; alpha = x + i y."""

    x_min: float
    x_max: float
    nx: int
    y_min: float
    y_max: float
    ny: int

    kind = "cartesian"

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"degenerate Cartesian layout {self}")

    @classmethod
    def square(cls, half_width: float, n: int) -> "CartesianLayout":
        return cls(-half_width, half_width, n, -half_width, half_width, n)

    @property
    def dims(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def x(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.dy

    def alpha(self) -> np.ndarray:
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return X + 1j * Y

    def weights(self) -> np.ndarray:
        return np.full(self.dims, self.dx * self.dy)

    def window(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "nx": self.nx,
                "y_min": self.y_min, "y_max": self.y_max, "ny": self.ny}

    def refined(self, factor: int = 2) -> "CartesianLayout":
        return CartesianLayout(self.x_min, self.x_max, self.nx * factor,
                               self.y_min, self.y_max, self.ny * factor)


@dataclass(frozen=True)
class PolarLayout:
    """Staggered polar grid: r_j = (j + 1/2) dr, theta_i = i dtheta.

    Arrays are indexed ``[j, i]`` (ring, angle). ``ntheta`` must be even so the
    pole reflection ``W(-r, theta) = W(r, theta + pi)`` lands on a node.
    """

    r_max: float
    nr: int
    ntheta: int

    kind = "polar"

    def __post_init__(self):
        if self.nr < 2 or self.ntheta < 4 or self.ntheta % 2 or not self.r_max > 0:
            raise ValueError(f"invalid polar layout {self} (need nr>=2, even ntheta>=4, r_max>0)")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.nr, self.ntheta)

    @property
    def dr(self) -> float:
        return self.r_max / self.nr

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.ntheta

    @property
    def r(self) -> np.ndarray:
        return (np.arange(self.nr) + 0.5) * self.dr

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.ntheta) * self.dtheta

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.r, self.theta, indexing="ij")

    def alpha(self) -> np.ndarray:
        R, T = self.mesh()
        return R * np.exp(1j * T)

    def weights(self) -> np.ndarray:
        return np.repeat((self.r * self.dr * self.dtheta)[:, None], self.ntheta, axis=1)

    def window(self) -> dict:
        return {"r_max": self.r_max, "nr": self.nr, "ntheta": self.ntheta}

    def refined(self, factor: int = 2) -> "PolarLayout":
        return PolarLayout(self.r_max, self.nr * factor, self.ntheta * factor)


def layout_from_dict(kind: str, window: dict):
    if kind == "cartesian":
        return CartesianLayout(float(window["x_min"]), float(window["x_max"]), int(window["nx"]),
                               float(window["y_min"]), float(window["y_max"]), int(window["ny"]))
    if kind == "polar":
        return PolarLayout(float(window["r_max"]), int(window["nr"]), int(window["ntheta"]))
    raise ValueError(f"unknown layout kind {kind!r}")


@dataclass
class GridData:
    """A real field sampled on a layout, as stored on disk."""

    layout: CartesianLayout | PolarLayout
    values: np.ndarray
    meta: dict = field(default_factory=dict)


def save_grid(path, layout, values, meta=None) -> Path:
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.shape != tuple(layout.dims):
        raise ValueError(f"values shape {values.shape} does not match layout dims {layout.dims}")
    header = json.dumps(
        {"layout": layout.kind, "dims": list(layout.dims), "window": layout.window(), "meta": meta or {}},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(values.tobytes(order="C"))
    return path


def load_grid(path) -> GridData:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a grid dump")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode())
    dims = tuple(header["dims"])
    values = np.frombuffer(raw[12 + hlen:], dtype="<f8")
    if values.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload has {values.size} values, header says {dims}")
    layout = layout_from_dict(header["layout"], header["window"])
    return GridData(layout, values.reshape(dims).astype(float), header.get("meta", {}))


def export_csv(path, layout, values) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if layout.kind == "cartesian":
            writer.writerow(["x", "y", "W"])
            X, Y = np.meshgrid(layout.x, layout.y, indexing="ij")
        else:
            writer.writerow(["r", "theta", "W"])
            X, Y = layout.mesh()
        for a, b, w in zip(X.ravel(), Y.ravel(), np.asarray(values).ravel()):
            writer.writerow([repr(float(a)), repr(float(b)), repr(float(w))])
    return path
