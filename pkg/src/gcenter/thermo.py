"""Steady-state 3D heat diffusion on a layered stack.

Finite volumes on a uniform cell-centred grid.  Face conductances use the
harmonic mean of the two adjacent cell conductivities.  The bottom and the
four side faces are held at a fixed temperature, the top face is insulated.
The resulting linear system is symmetric positive definite and is solved by
Jacobi-preconditioned conjugate gradients.

Arrays are indexed ``[ix, iy, iz]`` with ``iz = 0`` the bottom layer and
``iz = nz - 1`` the top surface.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .errors import NonConvergence, NoPeak, SchemaViolation, ValidationError

NM = 1e-9


@dataclass
class ThermalStack:
    spacing_nm: tuple[float, float, float]
    conductivity: np.ndarray          # W/m/K per cell
    source_w: np.ndarray              # W per cell
    base_temperature_k: float = 5.0
    # optional T(x, y, z) in metres for the fixed faces; default is the base
    boundary_temperature: Callable | None = None

    def __post_init__(self):
        self.conductivity = np.asarray(self.conductivity, dtype=float)
        self.source_w = np.asarray(self.source_w, dtype=float)
        if self.conductivity.ndim != 3 or self.conductivity.shape != self.source_w.shape:
            raise ValidationError("conductivity and source must be 3D arrays of equal shape")
        if np.any(~np.isfinite(self.conductivity)) or np.any(self.conductivity <= 0):
            raise ValidationError("conductivities must be positive")
        if any(s <= 0 for s in self.spacing_nm):
            raise ValidationError("spacings must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.conductivity.shape

    def cell_centres(self, axis: int) -> np.ndarray:
        """Cell-centre coordinates in metres; x and y centred on 0, z from 0 at the bottom."""
        n = self.shape[axis]
        h = self.spacing_nm[axis] * NM
        c = (np.arange(n) + 0.5) * h
        return c - 0.5 * n * h if axis < 2 else c


@dataclass
class ThermalSolution:
    temperature: np.ndarray
    spacing_nm: tuple[float, float, float]
    base_temperature_k: float
    iterations: int = 0
    residual: float = 0.0
    boundary_flux_w: float = 0.0

    @property
    def peak_k(self) -> float:
        return float(self.temperature.max())

    @property
    def rise(self) -> np.ndarray:
        return self.temperature - self.base_temperature_k


def _assemble(stack: ThermalStack):
    """Conductance matrix and right-hand side (with boundary contributions)."""
    k = stack.conductivity
    nx, ny, nz = stack.shape
    h = [s * NM for s in stack.spacing_nm]
    idx = np.arange(k.size).reshape(k.shape)
    diag = np.zeros(k.shape)
    rows, cols, vals = [], [], []
    for ax in range(3):
        area = h[0] * h[1] * h[2] / h[ax]
        k1 = np.take(k, range(k.shape[ax] - 1), axis=ax)
        k2 = np.take(k, range(1, k.shape[ax]), axis=ax)
        g = area / h[ax] * 2 * k1 * k2 / (k1 + k2)
        i1 = np.take(idx, range(k.shape[ax] - 1), axis=ax).ravel()
        i2 = np.take(idx, range(1, k.shape[ax]), axis=ax).ravel()
        rows += [i1, i2]
        cols += [i2, i1]
        vals += [-g.ravel(), -g.ravel()]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        diag[tuple(lo)] += g
        diag[tuple(hi)] += g

    # Dirichlet faces: half-cell conductance to the face value
    rhs = stack.source_w.copy()
    gb = np.zeros(k.shape)
    tb = np.zeros(k.shape)
    xs, ys, zs = (stack.cell_centres(a) for a in range(3))
    faces = [(0, 0, xs[0] - h[0] / 2), (0, -1, xs[-1] + h[0] / 2),
             (1, 0, ys[0] - h[1] / 2), (1, -1, ys[-1] + h[1] / 2),
             (2, 0, 0.0)]
    for ax, pos, coord in faces:
        area = h[0] * h[1] * h[2] / h[ax]
        sl = [slice(None)] * 3
        sl[ax] = pos
        sl = tuple(sl)
        g = area * k[sl] / (h[ax] / 2)
        if stack.boundary_temperature is None:
            t_face = np.full(g.shape, stack.base_temperature_k)
        else:
            grids = [xs, ys, zs]
            grids[ax] = np.array([coord])
            X, Y, Z = np.meshgrid(*grids, indexing="ij")
            t_face = np.asarray(stack.boundary_temperature(X, Y, Z), dtype=float).reshape(g.shape)
        gb[sl] += g
        tb[sl] += g * t_face
    diag += gb
    rhs += tb
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(k.size, k.size))
    return mat, rhs.ravel(), gb, tb


def solve_steady_state(stack: ThermalStack, rtol: float = 1e-8, max_iter: int = 20000) -> ThermalSolution:
    """Solve ∇·(k∇T) = -q; relative residual ||b - A T|| / ||b|| below ``rtol``."""
    nx, ny, nz = stack.shape
    if min(nx, ny, nz) < 32:
        raise ValidationError("grid must be at least 32 cells along every axis")
    if stack.boundary_temperature is None and not np.any(stack.source_w):
        t = np.full(stack.shape, float(stack.base_temperature_k))
        return ThermalSolution(t, stack.spacing_nm, stack.base_temperature_k)
    a, b, gb, tb = _assemble(stack)
    inv_d = 1.0 / a.diagonal()
    precond = LinearOperator(a.shape, matvec=lambda v: inv_d * v)
    count = [0]

    def cb(_):
        count[0] += 1

    x0 = np.full(b.size, float(stack.base_temperature_k))
    t, info = cg(a, b, x0=x0, rtol=rtol, atol=0.0, maxiter=max_iter, M=precond, callback=cb)
    res = float(np.linalg.norm(b - a @ t) / np.linalg.norm(b))
    if info != 0 or res >= rtol:
        raise NonConvergence(f"CG stopped after {count[0]} iterations", res)
    t = t.reshape(stack.shape)
    # heat leaving through the fixed faces
    flux = float(np.sum(gb * t - tb))
    return ThermalSolution(t, stack.spacing_nm, stack.base_temperature_k, count[0], res, flux)


def profile_fwhm(profile, spacing_nm: float | None = None, axis: int = 0,
                 height: int | None = None, base: float | None = None) -> float:
    """Full width at half maximum (µm) of ``profile - base``, linearly interpolated.

    ``profile`` is either a 1D array sampled every ``spacing_nm`` or a
    :class:`ThermalSolution`, in which case the line along ``axis`` through the
    in-plane maximum of z-layer ``height`` (default: top surface) is used.
    """
    if isinstance(profile, ThermalSolution):
        sol = profile
        t = sol.temperature
        iz = t.shape[2] - 1 if height is None else height
        plane = t[:, :, iz]
        ix, iy = np.unravel_index(np.argmax(plane), plane.shape)
        line = plane[:, iy] if axis == 0 else plane[ix, :]
        spacing_nm = sol.spacing_nm[axis]
        base = sol.base_temperature_k if base is None else base
    else:
        line = np.asarray(profile, dtype=float)
        if spacing_nm is None:
            raise ValidationError("spacing_nm is required for a bare profile")
        base = 0.0 if base is None else base
    y = line - base
    i_max = int(np.argmax(y))
    peak = y[i_max]
    if not np.isfinite(peak) or peak <= 0 or np.ptp(y) <= 1e-12 * max(abs(peak), 1.0):
        raise NoPeak("profile has no maximum above its base")
    if np.sum(y == peak) > 1:
        raise NoPeak("profile maximum is not unique")
    half = peak / 2
    left = np.flatnonzero(y[:i_max] < half)
    right = np.flatnonzero(y[i_max:] < half)
    if left.size == 0 or right.size == 0:
        raise NoPeak("profile does not fall below half maximum on both sides")
    il = left[-1]
    ir = i_max + right[0]
    xl = il + (half - y[il]) / (y[il + 1] - y[il])
    xr = ir - 1 + (half - y[ir - 1]) / (y[ir] - y[ir - 1])
    return float((xr - xl) * spacing_nm * 1e-3)


# Stack configuration -----------------------------------------------------

@dataclass
class Layer:
    name: str
    thickness_nm: float
    conductivity: float


@dataclass
class SourceSpec:
    center_nm: tuple[float, float] = (0.0, 0.0)
    extent_nm: tuple[float, float] = (300.0, 300.0)
    power_w: float = 100e-6


@dataclass
class StackConfig:
    """Layers listed from the top down; the last layer fills the remaining depth.

    ``ridge_width_nm`` turns the top layer into a ridge along x of that width
    with ``ridge_cladding_conductivity`` on either side; ``None`` keeps a
    continuous film.
    """
    domain_um: tuple[float, float, float] = (20.0, 20.0, 10.0)
    spacing_nm: tuple[float, float, float] = (250.0, 250.0, 110.0)
    base_temperature_k: float = 5.0
    layers: list[Layer] = field(default_factory=lambda: [
        Layer("si_device", 220.0, 10.0),
        Layer("buried_oxide", 2000.0, 0.1),
        Layer("si_substrate", 7780.0, 100.0),
    ])
    source: SourceSpec = field(default_factory=SourceSpec)
    ridge_width_nm: float | None = None
    ridge_cladding_conductivity: float = 1e-3

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict, path: str = "") -> "StackConfig":
        known = {"domain_um", "spacing_nm", "base_temperature_k", "layers", "source",
                 "ridge_width_nm", "ridge_cladding_conductivity"}
        for key in d:
            if key not in known:
                raise SchemaViolation(f"{path}{key}", "unknown key")
        kw = {k: v for k, v in d.items() if k not in ("layers", "source")}
        for key in ("domain_um", "spacing_nm"):
            if key in kw:
                if len(kw[key]) != 3:
                    raise SchemaViolation(f"{path}{key}", "expected three values")
                kw[key] = tuple(float(v) for v in kw[key])
        if "layers" in d:
            layers = []
            for i, ld in enumerate(d["layers"]):
                extra = set(ld) - {"name", "thickness_nm", "conductivity"}
                if extra:
                    raise SchemaViolation(f"{path}layers[{i}].{sorted(extra)[0]}", "unknown key")
                try:
                    layer = Layer(str(ld.get("name", f"layer{i}")), float(ld["thickness_nm"]),
                                  float(ld["conductivity"]))
                except KeyError as exc:
                    raise SchemaViolation(f"{path}layers[{i}].{exc.args[0]}", "missing") from None
                if layer.conductivity <= 0:
                    raise SchemaViolation(f"{path}layers[{i}].conductivity", "must be > 0")
                if layer.thickness_nm <= 0:
                    raise SchemaViolation(f"{path}layers[{i}].thickness_nm", "must be > 0")
                layers.append(layer)
            kw["layers"] = layers
        if "source" in d:
            sd = d["source"]
            extra = set(sd) - {"center_nm", "extent_nm", "power_w"}
            if extra:
                raise SchemaViolation(f"{path}source.{sorted(extra)[0]}", "unknown key")
            src = SourceSpec(**{k: tuple(v) if isinstance(v, list) else float(v) for k, v in sd.items()})
            if src.power_w < 0:
                raise SchemaViolation(f"{path}source.power_w", "must be >= 0")
            kw["source"] = src
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "StackConfig":
        return cls.from_dict(json.loads(text))


def build_stack(cfg: StackConfig) -> ThermalStack:
    """Sample layer conductivities at cell centres and spread the source over the top cells."""
    n = [int(round(cfg.domain_um[a] * 1e3 / cfg.spacing_nm[a])) for a in range(3)]
    h = cfg.spacing_nm
    depth = (n[2] - np.arange(n[2]) - 0.5) * h[2]  # depth of each z-centre below the top
    kz = np.full(n[2], float(cfg.layers[-1].conductivity))
    top = 0.0
    for layer in cfg.layers:
        sel = (depth >= top) & (depth < top + layer.thickness_nm)
        kz[sel] = layer.conductivity
        top += layer.thickness_nm
    k = np.broadcast_to(kz, n).copy()
    xc = (np.arange(n[0]) + 0.5) * h[0] - 0.5 * n[0] * h[0]
    yc = (np.arange(n[1]) + 0.5) * h[1] - 0.5 * n[1] * h[1]
    if cfg.ridge_width_nm is not None:
        top_cells = depth < cfg.layers[0].thickness_nm
        outside = np.abs(yc) > cfg.ridge_width_nm / 2
        k[np.ix_(np.ones(n[0], bool), outside, top_cells)] = cfg.ridge_cladding_conductivity

    def overlap(c, spacing, centre, extent):
        lo = np.maximum(c - spacing / 2, centre - extent / 2)
        hi = np.minimum(c + spacing / 2, centre + extent / 2)
        return np.clip(hi - lo, 0, None)

    wx = overlap(xc, h[0], cfg.source.center_nm[0], cfg.source.extent_nm[0])
    wy = overlap(yc, h[1], cfg.source.center_nm[1], cfg.source.extent_nm[1])
    q = np.zeros(n)
    if wx.sum() > 0 and wy.sum() > 0:
        q[:, :, -1] = cfg.source.power_w * np.outer(wx, wy) / (wx.sum() * wy.sum())
    return ThermalStack(tuple(h), k, q, cfg.base_temperature_k)


# Field export ------------------------------------------------------------

def write_field(path, sol: ThermalSolution) -> None:
    """Raw little-endian float64 (C order) plus a ``.json`` header next to it."""
    path = Path(path)
    sol.temperature.astype("<f8").tofile(path)
    header = {"shape": list(sol.temperature.shape), "dtype": "<f8", "order": "C",
              "spacing_nm": list(sol.spacing_nm), "base_temperature_k": sol.base_temperature_k,
              "peak_k": sol.peak_k}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))


def read_field(path) -> ThermalSolution:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    t = np.fromfile(path, dtype=header["dtype"])
    shape = tuple(header["shape"])
    if t.size != math.prod(shape):
        raise ValidationError("field size does not match header")
    return ThermalSolution(t.reshape(shape), tuple(header["spacing_nm"]), header["base_temperature_k"])
