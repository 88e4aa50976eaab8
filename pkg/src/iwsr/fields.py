"""Field-grid data model and numerics: synthetic stratified-wave generation,
terrain fill, normalization, block resampling, patch extraction and
interpolation baselines.

Grids hold four physical variables T (degC), S (psu), u and w (m/s) on a
(t, z, x) lattice with cell-centered physical coordinates
x_j = (j + 0.5) dx and z_k = (k + 0.5) dz (z measured upward from the
domain floor).  The terrain mask is time-invariant; True marks solid cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

VAR_NAMES = ("T", "S", "u", "w")


class GridError(ValueError):
    """Base class for field-grid contract violations."""


class ResolutionError(GridError):
    """Wave not resolvable on the requested lattice."""


class DegenerateDomainError(GridError):
    """No fluid cells to work with."""


class OrderingError(GridError):
    """Pipeline steps called out of order (e.g. normalize before fill)."""


class PatchRangeError(GridError):
    """Patch origin/extent outside the grid."""


@dataclass
class NormStats:
    """Per-variable z-score statistics computed over fluid cells only."""

    mean: dict[str, float]
    std: dict[str, float]

    def as_vector(self) -> np.ndarray:
        out = []
        for name in VAR_NAMES:
            out.extend([self.mean[name], self.std[name]])
        return np.asarray(out, dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "NormStats":
        vec = np.asarray(vec, dtype=np.float64)
        mean, std = {}, {}
        for i, name in enumerate(VAR_NAMES):
            mean[name] = float(vec[2 * i])
            std[name] = float(vec[2 * i + 1])
        return cls(mean, std)


@dataclass
class FieldGrid:
    vars: dict[str, np.ndarray]
    terrain: np.ndarray  # bool (nz, nx), True = solid
    dt: float
    dz: float
    dx: float
    terrain_filled: bool = False
    norm: NormStats | None = None

    def __post_init__(self):
        shapes = {name: a.shape for name, a in self.vars.items()}
        if set(self.vars) != set(VAR_NAMES):
            raise GridError(f"grid must carry variables {VAR_NAMES}, got {sorted(self.vars)}")
        ref = self.vars["T"].shape
        if len(ref) != 3:
            raise GridError(f"variables must be (nt, nz, nx), got {ref}")
        for name, shp in shapes.items():
            if shp != ref:
                raise GridError(f"variable {name} shape {shp} != {ref}")
        if self.terrain.shape != ref[1:]:
            raise GridError(f"terrain shape {self.terrain.shape} != (nz, nx) = {ref[1:]}")
        self.terrain = self.terrain.astype(bool)

    @property
    def nt(self) -> int:
        return self.vars["T"].shape[0]

    @property
    def nz(self) -> int:
        return self.vars["T"].shape[1]

    @property
    def nx(self) -> int:
        return self.vars["T"].shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.vars["T"].shape

    @property
    def fluid(self) -> np.ndarray:
        return ~self.terrain

    def stacked(self) -> np.ndarray:
        """Variables as one (4, nt, nz, nx) array in VAR_NAMES order."""
        return np.stack([self.vars[n] for n in VAR_NAMES])

    def copy(self) -> "FieldGrid":
        return FieldGrid({n: a.copy() for n, a in self.vars.items()},
                         self.terrain.copy(), self.dt, self.dz, self.dx,
                         self.terrain_filled, self.norm)


@dataclass
class TopographyProfile:
    """Bottom height h_b(x) in meters above the domain floor."""

    kind: str = "flat"
    sill_center: float | None = None  # meters; defaults to mid-domain
    sill_width: float = 2000.0
    sill_height: float = 200.0
    slope_grade: float = 0.02

    def height(self, x: np.ndarray, length: float) -> np.ndarray:
        if self.kind == "flat":
            return np.zeros_like(x)
        if self.kind == "sill":
            c = self.sill_center if self.sill_center is not None else 0.5 * length
            return self.sill_height * np.exp(-0.5 * ((x - c) / self.sill_width) ** 2)
        if self.kind == "slope":
            return self.slope_grade * x
        raise GridError(f"unknown topography kind {self.kind!r}")

    def dheight(self, x: np.ndarray, length: float) -> np.ndarray:
        if self.kind == "flat":
            return np.zeros_like(x)
        if self.kind == "sill":
            c = self.sill_center if self.sill_center is not None else 0.5 * length
            h = self.height(x, length)
            return -h * (x - c) / self.sill_width ** 2
        if self.kind == "slope":
            return np.full_like(x, self.slope_grade)
        raise GridError(f"unknown topography kind {self.kind!r}")


@dataclass
class GenConfig:
    nt: int = 64
    nz: int = 64
    nx: int = 256
    dt: float = 60.0      # s
    dz: float = 7.8125    # m (H = 500 m at nz = 64)
    dx: float = 50.0      # m
    amplitude: float = 30.0     # m
    wavelength: float = 1000.0  # m
    phase_speed: float = 0.8    # m/s
    x0: float | None = None     # initial crest position; default 0.25 * Lx
    t_surface: float = 28.0
    t_bottom: float = 4.0
    s_surface: float = 33.0
    s_bottom: float = 35.0
    pycnocline_height: float | None = None  # m above floor; default 0.75 * H
    pycnocline_thickness: float = 40.0      # m
    noise_std: float = 0.0
    seed: int = 0
    dtype: type = np.float32

    @property
    def depth(self) -> float:
        return self.nz * self.dz

    @property
    def length(self) -> float:
        return self.nx * self.dx


def _background_profiles(cfg: GenConfig, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smooth pycnocline profiles, defined for all real z (extrapolates)."""
    zc = cfg.pycnocline_height if cfg.pycnocline_height is not None else 0.75 * cfg.depth
    frac = 0.5 * (1.0 + np.tanh((z - zc) / cfg.pycnocline_thickness))
    t_prof = cfg.t_bottom + (cfg.t_surface - cfg.t_bottom) * frac
    s_prof = cfg.s_bottom + (cfg.s_surface - cfg.s_bottom) * frac
    return t_prof, s_prof


def generate_synthetic(cfg: GenConfig, topo: TopographyProfile | None = None) -> FieldGrid:
    """Analytic solitary-wave field on a terrain-following streamfunction.

    psi = c * a0 * sech^2((x - x0 - c t) / lambda) * sin(pi * sigma) with
    sigma the terrain-following vertical coordinate, so (u, w) =
    (dpsi/dz, -dpsi/dx) is exactly divergence-free in the fluid interior.
    T and S are background profiles displaced vertically by the wave.
    """
    topo = topo or TopographyProfile()
    h = cfg.depth
    if not cfg.amplitude < h:
        raise GridError(f"amplitude {cfg.amplitude} must be below the domain height {h}")
    if not cfg.wavelength > 2.0 * cfg.dx:
        raise ResolutionError(
            f"wavelength {cfg.wavelength} m not resolvable at dx = {cfg.dx} m "
            f"(needs wavelength > {2.0 * cfg.dx} m)")

    x = (np.arange(cfg.nx) + 0.5) * cfg.dx
    z = (np.arange(cfg.nz) + 0.5) * cfg.dz
    t = np.arange(cfg.nt) * cfg.dt

    hb = topo.height(x, cfg.length)
    dhb = topo.dheight(x, cfg.length)
    if hb.min() < 0.0 or hb.max() >= h:
        raise GridError(f"bottom height range [{hb.min()}, {hb.max()}] outside [0, {h})")
    terrain = z[:, None] < hb[None, :]

    x0 = cfg.x0 if cfg.x0 is not None else 0.25 * cfg.length
    c, a0, lam = cfg.phase_speed, cfg.amplitude, cfg.wavelength

    # Broadcast to (nt, nz, nx).
    tt = t[:, None, None]
    zz = z[None, :, None]
    xx = x[None, None, :]
    hbx = hb[None, None, :]
    dhbx = dhb[None, None, :]

    col = h - hbx  # local water-column height
    sigma = np.clip((zz - hbx) / col, 0.0, 1.0)
    dsig_dz = 1.0 / col
    dsig_dx = dhbx * (sigma - 1.0) / col

    theta = (xx - x0 - c * tt) / lam
    sech2 = 1.0 / np.cosh(theta) ** 2
    tanh = np.tanh(theta)
    sin_s = np.sin(np.pi * sigma)
    cos_s = np.cos(np.pi * sigma)

    u = c * a0 * sech2 * np.pi * cos_s * dsig_dz
    w = c * a0 * (2.0 * sech2 * tanh * sin_s / lam - sech2 * np.pi * cos_s * dsig_dx)

    eta = a0 * sech2 * sin_s
    t_field, s_field = _background_profiles(cfg, zz - eta)
    t_field = np.broadcast_to(t_field, (cfg.nt, cfg.nz, cfg.nx)).copy()
    s_field = np.broadcast_to(s_field, (cfg.nt, cfg.nz, cfg.nx)).copy()

    variables = {"T": t_field, "S": s_field, "u": u, "w": w}
    if cfg.noise_std > 0.0:
        rng = np.random.default_rng(cfg.seed)
        fluid3 = np.broadcast_to(~terrain, (cfg.nt, cfg.nz, cfg.nx))
        for name in VAR_NAMES:
            noise = rng.normal(0.0, cfg.noise_std, size=(cfg.nt, cfg.nz, cfg.nx))
            variables[name] = variables[name] + noise * fluid3

    variables = {n: np.ascontiguousarray(a, dtype=cfg.dtype) for n, a in variables.items()}
    return FieldGrid(variables, terrain, cfg.dt, cfg.dz, cfg.dx)


def terrain_fill(grid: FieldGrid) -> FieldGrid:
    """Replace solid-cell values with the per-time fluid mean of each variable.

    Idempotent; fluid cells are untouched.  Keeps normalization ranges driven
    by the fluid data.
    """
    fluid = grid.fluid
    n_fluid = int(fluid.sum())
    if n_fluid == 0:
        raise DegenerateDomainError("terrain mask has no fluid cells")
    out = {}
    for name in VAR_NAMES:
        v = grid.vars[name].copy()
        # Accumulate in float64 so the filled value is the fluid mean to
        # within rounding of the storage dtype.
        means = v[:, fluid].astype(np.float64).mean(axis=1)  # (nt,)
        v[:, grid.terrain] = means[:, None].astype(v.dtype)
        out[name] = v
    return FieldGrid(out, grid.terrain.copy(), grid.dt, grid.dz, grid.dx,
                     terrain_filled=True, norm=grid.norm)


def fluid_stats(grid: FieldGrid) -> NormStats:
    fluid = grid.fluid
    if not fluid.any():
        raise DegenerateDomainError("terrain mask has no fluid cells")
    mean, std = {}, {}
    for name in VAR_NAMES:
        cells = grid.vars[name][:, fluid]
        mean[name] = float(cells.mean())
        s = float(cells.std())
        std[name] = s if s > 1e-12 else 1.0
    return NormStats(mean, std)


def normalize(grid: FieldGrid, stats: NormStats | None = None, *,
              require_fill: bool = True) -> tuple[FieldGrid, NormStats]:
    """Per-variable z-score over fluid-cell statistics.

    ``terrain_fill`` must have run first so the filled terrain values stay
    inside the fluid range; pass ``require_fill=False`` to normalize an
    unfilled grid anyway (the terrain-fill ablation arm).
    """
    if require_fill and not grid.terrain_filled:
        raise OrderingError("normalize requires terrain_fill to have been applied")
    stats = stats or fluid_stats(grid)
    out = {}
    for name in VAR_NAMES:
        v = grid.vars[name]
        out[name] = ((v - stats.mean[name]) / stats.std[name]).astype(v.dtype)
    return FieldGrid(out, grid.terrain.copy(), grid.dt, grid.dz, grid.dx,
                     terrain_filled=grid.terrain_filled, norm=stats), stats


def denormalize(grid: FieldGrid, stats: NormStats | None = None) -> FieldGrid:
    stats = stats or grid.norm
    if stats is None:
        raise OrderingError("denormalize needs NormStats (none attached to grid)")
    out = {}
    for name in VAR_NAMES:
        v = grid.vars[name]
        out[name] = (v * stats.std[name] + stats.mean[name]).astype(v.dtype)
    return FieldGrid(out, grid.terrain.copy(), grid.dt, grid.dz, grid.dx,
                     terrain_filled=grid.terrain_filled, norm=None)


def downsample(grid: FieldGrid, factors) -> FieldGrid:
    """Block-mean pooling by (f_t, f_z, f_x); mask by majority vote, ties solid."""
    ft, fz, fx = (int(f) for f in factors)
    nt, nz, nx = grid.shape
    if nt % ft or nz % fz or nx % fx:
        crop = (nt - nt % ft, nz - nz % fz, nx - nx % fx)
        raise GridError(
            f"grid {grid.shape} not divisible by factors {(ft, fz, fx)}; "
            f"largest valid crop is {crop}")
    out = {}
    for name in VAR_NAMES:
        v = grid.vars[name]
        out[name] = v.reshape(nt // ft, ft, nz // fz, fz, nx // fx, fx).mean(
            axis=(1, 3, 5)).astype(v.dtype)
    solid = grid.terrain.reshape(nz // fz, fz, nx // fx, fx).sum(axis=(1, 3))
    mask = solid * 2 >= fz * fx  # ties -> solid
    return FieldGrid(out, mask, grid.dt * ft, grid.dz * fz, grid.dx * fx,
                     terrain_filled=grid.terrain_filled, norm=grid.norm)


def extract_patch(grid: FieldGrid, origin, sizes) -> FieldGrid:
    """Copy the sub-block at ``origin`` (t, z, x) with the given sizes."""
    ot, oz, ox = (int(v) for v in origin)
    st, sz, sx = (int(v) for v in sizes)
    nt, nz, nx = grid.shape
    if ot < 0 or oz < 0 or ox < 0 or ot + st > nt or oz + sz > nz or ox + sx > nx:
        raise PatchRangeError(
            f"patch origin {origin} sizes {sizes} outside grid {grid.shape}")
    out = {n: grid.vars[n][ot:ot + st, oz:oz + sz, ox:ox + sx].copy() for n in VAR_NAMES}
    mask = grid.terrain[oz:oz + sz, ox:ox + sx].copy()
    return FieldGrid(out, mask, grid.dt, grid.dz, grid.dx,
                     terrain_filled=grid.terrain_filled, norm=grid.norm)


def random_origins(grid: FieldGrid, sizes, count: int, rng) -> np.ndarray:
    """Uniform, seed-reproducible patch origins; returns (count, 3) ints."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    st, sz, sx = (int(v) for v in sizes)
    nt, nz, nx = grid.shape
    if st > nt or sz > nz or sx > nx:
        raise PatchRangeError(f"patch sizes {sizes} exceed grid {grid.shape}")
    highs = (nt - st + 1, nz - sz + 1, nx - sx + 1)
    return np.stack([rng.integers(0, h, size=count) for h in highs], axis=1)


# -- interpolation baselines ---------------------------------------------------


def _axis_positions(n_hr: int, factor: int) -> np.ndarray:
    """Low-res sample coordinate of each high-res index (block-center aligned)."""
    return (np.arange(n_hr) + 0.5) / factor - 0.5


def _linear_matrix(n_lr: int, n_hr: int, factor: int) -> np.ndarray:
    w = np.zeros((n_hr, n_lr))
    if n_lr == 1:
        w[:, 0] = 1.0
        return w
    u = _axis_positions(n_hr, factor)
    i0 = np.clip(np.floor(u).astype(int), 0, n_lr - 2)
    s = u - i0  # may leave [0, 1] at the edges: linear extrapolation
    w[np.arange(n_hr), i0] = 1.0 - s
    w[np.arange(n_hr), i0 + 1] += s
    return w


def _catmull_rom_matrix(n_lr: int, n_hr: int, factor: int) -> np.ndarray:
    w = np.zeros((n_hr, n_lr))
    if n_lr == 1:
        w[:, 0] = 1.0
        return w
    if n_lr < 3:
        return _linear_matrix(n_lr, n_hr, factor)
    u = _axis_positions(n_hr, factor)
    i1 = np.clip(np.floor(u).astype(int), 0, n_lr - 2)
    s = u - i1
    idx = np.stack([i1 - 1, i1, i1 + 1, i1 + 2])
    idx = np.clip(idx, 0, n_lr - 1)  # edge clamping
    coeff = np.stack([
        0.5 * (-s + 2 * s ** 2 - s ** 3),
        0.5 * (2 - 5 * s ** 2 + 3 * s ** 3),
        0.5 * (s + 4 * s ** 2 - 3 * s ** 3),
        0.5 * (-(s ** 2) + s ** 3),
    ])
    for k in range(4):
        np.add.at(w, (np.arange(n_hr), idx[k]), coeff[k])
    return w


def baseline_upsample(grid: FieldGrid, factors, method: str = "trilinear") -> FieldGrid:
    """Separable interpolation along (t, z, x); the comparison baseline."""
    ft, fz, fx = (int(f) for f in factors)
    if min(ft, fz, fx) < 1:
        raise GridError(f"upsample factors must be >= 1, got {factors}")
    builders = {"trilinear": _linear_matrix, "cubic": _catmull_rom_matrix}
    if method not in builders:
        raise GridError(f"unknown method {method!r}; expected one of {sorted(builders)}")
    build = builders[method]
    nt, nz, nx = grid.shape
    mats = [build(n, n * f, f) for n, f in zip((nt, nz, nx), (ft, fz, fx))]

    out = {}
    for name in VAR_NAMES:
        v = grid.vars[name].astype(np.float64)
        for axis, m in enumerate(mats):
            v = np.moveaxis(np.tensordot(m, v, axes=([1], [axis])), 0, axis)
        out[name] = v.astype(grid.vars[name].dtype)

    # Nearest-neighbor mask expansion.
    uz = np.clip(np.rint(_axis_positions(nz * fz, fz)).astype(int), 0, nz - 1)
    ux = np.clip(np.rint(_axis_positions(nx * fx, fx)).astype(int), 0, nx - 1)
    mask = grid.terrain[np.ix_(uz, ux)]
    return FieldGrid(out, mask, grid.dt / ft, grid.dz / fz, grid.dx / fx,
                     terrain_filled=grid.terrain_filled, norm=grid.norm)
