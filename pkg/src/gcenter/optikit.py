"""Scalar finite-difference waveguide modes and fiber-to-waveguide overlap.

Grids are cell-centred: node ``i`` sits at ``x0 + (i + 0.5) * dx`` so that
material interfaces placed on multiples of the spacing fall between nodes.
Arrays are indexed ``[ix, iy]`` with ``x`` horizontal (core width) and ``y``
vertical (core height).  All lengths are in nm.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import GridMismatch, NoGuidedMode, NonConvergence, ValidationError

N_SI = 3.507
N_SIO2 = 1.447
N_AIR = 1.0


@dataclass
class IndexMap:
    x0: float
    y0: float
    dx: float
    dy: float
    n: np.ndarray
    wavelength_nm: float

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        if self.n.ndim != 2:
            raise ValidationError("index map must be 2D")
        if self.dx <= 0 or self.dy <= 0 or self.wavelength_nm <= 0:
            raise ValidationError("spacings and wavelength must be positive")
        if np.any(self.n < 1.0):
            raise ValidationError("refractive indices must be >= 1")

    @property
    def shape(self) -> tuple[int, int]:
        return self.n.shape

    @property
    def x(self) -> np.ndarray:
        return self.x0 + (np.arange(self.shape[0]) + 0.5) * self.dx

    @property
    def y(self) -> np.ndarray:
        return self.y0 + (np.arange(self.shape[1]) + 0.5) * self.dy

    @property
    def boundary_index(self) -> float:
        """Largest index touching the domain edge (the cladding bound)."""
        n = self.n
        return float(max(n[0].max(), n[-1].max(), n[:, 0].max(), n[:, -1].max()))


@dataclass
class ModeField:
    x0: float
    y0: float
    dx: float
    dy: float
    field: np.ndarray
    n_eff: float
    wavelength_nm: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.field.shape

    @property
    def x(self) -> np.ndarray:
        return self.x0 + (np.arange(self.shape[0]) + 0.5) * self.dx

    @property
    def y(self) -> np.ndarray:
        return self.y0 + (np.arange(self.shape[1]) + 0.5) * self.dy

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x0 + self.shape[0] * self.dx,
                self.y0, self.y0 + self.shape[1] * self.dy)

    def norm2(self) -> float:
        return float(np.sum(self.field ** 2) * self.dx * self.dy)


def waveguide_index_map(width_nm: float = 400.0, height_nm: float = 220.0,
                        wavelength_nm: float = 1278.0, dx: float = 10.0, dy: float = 10.0,
                        margin_nm: float = 1500.0, n_core: float = N_SI,
                        n_substrate: float = N_SIO2, n_top: float = N_AIR) -> IndexMap:
    """Rectangular core on a substrate half-space with a top cladding.

    The core spans x in [-w/2, w/2] and y in [0, h].  Index of each cell is
    taken at its centre.
    """
    nx = int(math.ceil((width_nm + 2 * margin_nm) / dx))
    ny = int(math.ceil((height_nm + 2 * margin_nm) / dy))
    x0 = -0.5 * nx * dx
    # align y so that y=0 lands on a cell face
    y0 = -math.ceil(margin_nm / dy) * dy
    xc = x0 + (np.arange(nx) + 0.5) * dx
    yc = y0 + (np.arange(ny) + 0.5) * dy
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    n = np.where(Y < 0, n_substrate, n_top)
    core = (np.abs(X) < width_nm / 2) & (Y > 0) & (Y < height_nm)
    n = np.where(core, n_core, n)
    return IndexMap(x0, y0, dx, dy, n, wavelength_nm)


def helmholtz_operator(imap: IndexMap) -> sp.csc_matrix:
    """Sparse 5-point ∇²_t + k0²n² with zero-field Dirichlet edges."""
    nx, ny = imap.shape
    k0 = 2 * math.pi / imap.wavelength_nm

    def d2(m, h):
        return sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h ** 2

    lap = sp.kron(d2(nx, imap.dx), sp.identity(ny)) + sp.kron(sp.identity(nx), d2(ny, imap.dy))
    return (lap + sp.diags((k0 * imap.n).ravel() ** 2)).tocsc()


def solve_fundamental_mode(imap: IndexMap, tol: float = 1e-12, max_iter: int = 5000) -> ModeField:
    """Largest-β² eigenpair by shifted inverse iteration.

    The shift k0²·max(n)² bounds the spectrum from above, so the eigenvalue
    closest to it is the fundamental mode.  The inverse iterates are
    accelerated by Lanczos (ARPACK shift-invert mode) because wide cores have
    lateral modes within a fraction of a percent of the fundamental.
    """
    if imap.dx > 20 or imap.dy > 20:
        raise ValidationError("grid spacing must be <= 20 nm")
    k0 = 2 * math.pi / imap.wavelength_nm
    a = helmholtz_operator(imap)
    sigma = (k0 * imap.n.max()) ** 2
    lu = splu((a - sigma * sp.identity(a.shape[0], format="csc")).tocsc())
    op_inv = LinearOperator(a.shape, matvec=lu.solve, dtype=float)
    # start from the index profile itself: overlaps well with the fundamental
    v0 = (imap.n - imap.n.min() + 1e-3).ravel()
    try:
        vals, vecs = eigsh(a, k=1, sigma=sigma, which="LM", OPinv=op_inv, v0=v0, tol=tol, maxiter=max_iter)
    except ArpackNoConvergence as exc:
        raise NonConvergence("shift-invert iteration did not converge", float("nan")) from exc
    lam = float(vals[0])
    v = vecs[:, 0]
    if lam <= 0:
        raise NoGuidedMode("fundamental eigenvalue is not positive")
    n_eff = math.sqrt(lam) / k0
    if n_eff <= imap.boundary_index:
        raise NoGuidedMode(f"n_eff {n_eff:.5f} <= cladding index {imap.boundary_index:.5f}")
    field = v.reshape(imap.shape)
    if field.sum() < 0:
        field = -field
    field = field / math.sqrt(np.sum(field ** 2) * imap.dx * imap.dy)
    return ModeField(imap.x0, imap.y0, imap.dx, imap.dy, field, n_eff, imap.wavelength_nm)


def gaussian_fiber_mode(waist_diameter_um: float, grid, center_nm: tuple[float, float] = (0.0, 0.0),
                        n_eff: float = 1.0) -> ModeField:
    """Circular Gaussian amplitude exp(-r²/w²), w = half the 1/e² intensity diameter.

    ``grid`` is an IndexMap/ModeField or a tuple ``(x0, y0, dx, dy, nx, ny)``.
    """
    if waist_diameter_um <= 0:
        raise ValidationError("waist diameter must be positive")
    if isinstance(grid, (IndexMap, ModeField)):
        x0, y0, dx, dy = grid.x0, grid.y0, grid.dx, grid.dy
        nx, ny = grid.shape
        wl = grid.wavelength_nm
    else:
        x0, y0, dx, dy, nx, ny = grid
        wl = float("nan")
    w = 0.5 * waist_diameter_um * 1e3
    xc = x0 + (np.arange(nx) + 0.5) * dx - center_nm[0]
    yc = y0 + (np.arange(ny) + 0.5) * dy - center_nm[1]
    field = np.exp(-(xc[:, None] ** 2 + yc[None, :] ** 2) / w ** 2)
    field /= math.sqrt(np.sum(field ** 2) * dx * dy)
    return ModeField(x0, y0, dx, dy, field, n_eff, wl)


def padded_grid(imap: IndexMap | ModeField, half_width_nm: float) -> tuple:
    """Grid with the same spacing and node alignment as ``imap`` covering ±half_width around its centre."""
    x_lo, x_hi, y_lo, y_hi = (imap.x0, imap.x0 + imap.shape[0] * imap.dx,
                              imap.y0, imap.y0 + imap.shape[1] * imap.dy)
    cx, cy = 0.5 * (x_lo + x_hi), 0.5 * (y_lo + y_hi)
    kx0 = math.floor((cx - half_width_nm - imap.x0) / imap.dx)
    ky0 = math.floor((cy - half_width_nm - imap.y0) / imap.dy)
    nx = int(math.ceil(2 * half_width_nm / imap.dx)) + 1
    ny = int(math.ceil(2 * half_width_nm / imap.dy)) + 1
    return (imap.x0 + kx0 * imap.dx, imap.y0 + ky0 * imap.dy, imap.dx, imap.dy, nx, ny)


def _area(m: ModeField) -> float:
    x_lo, x_hi, y_lo, y_hi = m.extent
    return (x_hi - x_lo) * (y_hi - y_lo)


def _resample(src: ModeField, dst: ModeField) -> np.ndarray:
    if (src.x0, src.y0, src.dx, src.dy, src.shape) == (dst.x0, dst.y0, dst.dx, dst.dy, dst.shape):
        return src.field
    interp = RegularGridInterpolator((src.x, src.y), src.field, bounds_error=False, fill_value=0.0)
    X, Y = np.meshgrid(dst.x, dst.y, indexing="ij")
    return interp(np.stack([X.ravel(), Y.ravel()], axis=-1)).reshape(dst.shape)


def fresnel_transmission(n_eff: float) -> float:
    return 1.0 - ((n_eff - 1.0) / (n_eff + 1.0)) ** 2


def overlap_efficiency(a: ModeField, b: ModeField, fresnel: bool = False) -> float:
    """|∫a·b|² / (∫a² ∫b²), optionally times the normal-incidence Fresnel transmission.

    The field on the smaller domain is interpolated onto the larger one (zero
    outside its own domain).  The Fresnel factor uses the larger of the two
    effective indices, i.e. the waveguide side of the facet.
    """
    ax0, ax1, ay0, ay1 = a.extent
    bx0, bx1, by0, by1 = b.extent
    if min(ax1, bx1) <= max(ax0, bx0) or min(ay1, by1) <= max(ay0, by0):
        raise GridMismatch("field domains do not overlap")
    # deterministic ordering keeps the result exactly symmetric
    key = lambda m: (_area(m), m.shape, m.dx, m.dy, m.x0, m.y0)
    big, small = (a, b) if key(a) >= key(b) else (b, a)
    fb = big.field
    fs = _resample(small, big)
    num = float(np.sum(fb * fs)) ** 2
    den = float(np.sum(fb * fb)) * float(np.sum(fs * fs))
    eta = 0.0 if den == 0 else min(num / den, 1.0)
    if fresnel:
        eta *= fresnel_transmission(max(a.n_eff, b.n_eff))
    return eta


def fiber_coupling_efficiency(width_nm: float = 400.0, height_nm: float = 220.0,
                              wavelength_nm: float = 1280.0, waist_diameter_um: float = 2.1,
                              spacing_nm: float = 10.0, fresnel: bool = True) -> dict:
    """Solve the waveguide mode and overlap it with a centred fiber Gaussian."""
    imap = waveguide_index_map(width_nm, height_nm, wavelength_nm, spacing_nm, spacing_nm)
    mode = solve_fundamental_mode(imap)
    half = max(4.0 * waist_diameter_um * 1e3, 0.5 * imap.shape[0] * imap.dx)
    gauss = gaussian_fiber_mode(waist_diameter_um, padded_grid(imap, half),
                                center_nm=(0.0, height_nm / 2))
    gauss.wavelength_nm = wavelength_nm
    return {"n_eff": mode.n_eff,
            "overlap": overlap_efficiency(mode, gauss, fresnel=False),
            "efficiency": overlap_efficiency(mode, gauss, fresnel=fresnel),
            "mode": mode}


# CSV grid + JSON sidecar -------------------------------------------------

def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_grid(path, obj: IndexMap | ModeField) -> None:
    path = Path(path)
    values = obj.n if isinstance(obj, IndexMap) else obj.field
    np.savetxt(path, values, delimiter=",", fmt="%.10g")
    meta = {"kind": "index_map" if isinstance(obj, IndexMap) else "mode_field",
            "x0_nm": obj.x0, "y0_nm": obj.y0, "dx_nm": obj.dx, "dy_nm": obj.dy,
            "nx": obj.shape[0], "ny": obj.shape[1], "wavelength_nm": obj.wavelength_nm}
    if isinstance(obj, ModeField):
        meta["n_eff"] = obj.n_eff
    _sidecar(path).write_text(json.dumps(meta, indent=2))


def read_grid(path) -> IndexMap | ModeField:
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    if values.shape != (meta["nx"], meta["ny"]):
        raise ValidationError(f"grid shape {values.shape} does not match sidecar")
    geo = (meta["x0_nm"], meta["y0_nm"], meta["dx_nm"], meta["dy_nm"])
    if meta["kind"] == "index_map":
        return IndexMap(*geo, values, meta["wavelength_nm"])
    return ModeField(*geo, values, meta["n_eff"], meta["wavelength_nm"])
