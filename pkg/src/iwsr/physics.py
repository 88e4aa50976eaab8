"""Navier-Stokes residuals of the decoder field, evaluated with central
finite differences in the normalized coordinate cube.

The decoder predicts normalized (T, S, u, w, p) at continuous points; this
module converts those predictions and their stencil derivatives back to
physical units and forms the residuals of the Boussinesq equations for a
non-rotating x-z slice:

    continuity   u_x + w_z = 0
    x-momentum   u_t + u u_x + w u_z + p_x / rho0 - nu_h u_xx - nu_z u_zz = 0
    z-momentum   w_t + u w_x + w w_z + p_z / rho0 + g rho'/rho0
                     - nu_h w_xx - nu_z w_zz = 0
    T transport  T_t + u T_x + w T_z = 0
    S transport  S_t + u S_x + w S_z = 0

Temperature and salinity diffusivities are zero; density follows a linear
equation of state and rho' is the anomaly against a background profile.
Each equation is non-dimensionalized by the (gradient-detached) root mean
square of its dominant term before entering the loss, so no equation can
silently dominate or vanish.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, Tensor, concat, reduce_mean, reduce_sum
from .fields import NormStats

VAR_IDX = {"T": 0, "S": 1, "u": 2, "w": 3, "p": 4}
EQUATIONS = ("continuity", "x_momentum", "z_momentum", "T_transport", "S_transport")


class StencilError(ValueError):
    """Finite-difference step configuration is unusable."""


@dataclass
class PhysParams:
    rho0: float = 1025.0
    alpha: float = 2.0e-4     # thermal expansion, 1/degC
    beta: float = 7.6e-4      # haline contraction, 1/psu
    T_ref: float = 10.0
    S_ref: float = 35.0
    nu_h: float = 1.0e-3      # horizontal eddy viscosity, m^2/s
    nu_z: float = 1.0e-6      # vertical eddy viscosity, m^2/s
    kappa_T: float = 0.0
    kappa_S: float = 0.0
    g: float = 9.81


@dataclass
class StencilConfig:
    """Central-difference steps in normalized (t, z, x) coordinates."""

    h_t: float
    h_z: float
    h_x: float

    def __post_init__(self):
        for name, h in (("h_t", self.h_t), ("h_z", self.h_z), ("h_x", self.h_x)):
            if not (h >= 1e-6):
                raise StencilError(f"{name} = {h!r}; steps below 1e-6 lose all "
                                   "precision in float32 coordinates")
            if h > 0.5:
                raise StencilError(f"{name} = {h!r} exceeds half the unit cube")

    @classmethod
    def for_grid(cls, nt: int, nz: int, nx: int) -> "StencilConfig":
        """Default step: half a high-resolution cell per axis."""
        return cls(0.5 / nt, 0.5 / nz, 0.5 / nx)


def eos_density(T, S, params: PhysParams = PhysParams()):
    """Linear equation of state; works on numpy arrays and Tensors alike."""
    return (T * (-params.rho0 * params.alpha) + S * (params.rho0 * params.beta)
            + params.rho0 * (1.0 + params.alpha * params.T_ref
                             - params.beta * params.S_ref))


def _constant_profile(value: float):
    return lambda z: np.full_like(np.asarray(z, dtype=np.float64), value)


@dataclass
class GridScales:
    """Physical extents and normalization scales of one training block.

    ``extent_*`` are the physical spans (seconds / metres) covered by the
    normalized unit cube.  ``norm`` carries the per-variable mean/std used
    when the fields were standardized.  ``background_T``/``background_S``
    map physical depth to the ambient stratification used for the buoyancy
    anomaly; the default is the constant normalization mean.
    """

    extent_t: float
    extent_z: float
    extent_x: float
    norm: NormStats
    background_T: object = None
    background_S: object = None
    p_scale: float | None = None

    def __post_init__(self):
        if min(self.extent_t, self.extent_z, self.extent_x) <= 0:
            raise StencilError("block extents must be positive")
        if self.background_T is None:
            self.background_T = _constant_profile(self.norm.mean["T"])
        if self.background_S is None:
            self.background_S = _constant_profile(self.norm.mean["S"])

    def pressure_scale(self, params: PhysParams) -> float:
        """Physical scale of the auxiliary pressure channel.

        Defaults to a dynamic pressure rho0 U^2 built from the velocity
        stds.  In stratified flow that badly underestimates the pressure
        anomalies needed to balance buoyancy, so callers that know the
        density anomaly of their data should set ``p_scale`` to a
        hydrostatic value (g * rms(rho') * depth) instead; with a scale
        that small the pressure channel cannot participate in the momentum
        balance and the optimizer flattens the other fields instead.
        """
        if self.p_scale is not None:
            return self.p_scale
        return params.rho0 * (self.norm.std["u"] ** 2 + self.norm.std["w"] ** 2)


def _stencil_points(points: np.ndarray, st: StencilConfig) -> np.ndarray:
    """[7N, 3] stack: centers clamped to the interior margin, then the six
    axis offsets.  Offset-major layout: block o covers rows o*N..(o+1)*N."""
    h = np.array([st.h_t, st.h_z, st.h_x], dtype=points.dtype)
    center = np.clip(points, h, 1.0 - h)
    stacks = [center]
    for axis in range(3):
        e = np.zeros(3, dtype=points.dtype)
        e[axis] = h[axis]
        stacks.append(center + e)
        stacks.append(center - e)
    return np.concatenate(stacks, axis=0)


def pde_residuals(model, points, scales: GridScales,
                  params: PhysParams = PhysParams(),
                  stencil: StencilConfig | None = None):
    """Equation residuals at N points.

    ``model`` maps a [M, 3] coordinate Tensor to normalized [M, 5]
    predictions.  Returns ``(residuals, terms)``: residuals is a dict of
    [N, 1] Tensors per equation, terms a dict of per-equation term lists
    (the first entry of each list is the dominant term used for scaling).
    """
    pts = points.data if isinstance(points, Tensor) else np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ContractError(f"points must be [N, 3], got {pts.shape}")
    if pts.shape[0] == 0:
        raise ContractError("pde_residuals called with an empty point batch")
    if stencil is None:
        stencil = StencilConfig(0.05, 0.05, 0.05)
    n = pts.shape[0]
    out = model(Tensor(_stencil_points(pts, stencil)))

    # f[var][offset]: offset 0 = center, (1, 2) = +/- t, (3, 4) = +/- z,
    # (5, 6) = +/- x.
    def at(offset, var):
        c = VAR_IDX[var]
        return out[offset * n:(offset + 1) * n, c:c + 1]

    std = scales.norm.std
    mean = scales.norm.mean
    p_scale = scales.pressure_scale(params)
    extent = {"t": scales.extent_t, "z": scales.extent_z, "x": scales.extent_x}
    h = {"t": stencil.h_t, "z": stencil.h_z, "x": stencil.h_x}
    off = {"t": (1, 2), "z": (3, 4), "x": (5, 6)}

    def phys_scale(var):
        return p_scale if var == "p" else std[var]

    def d1(var, axis):
        plus, minus = off[axis]
        factor = phys_scale(var) / (2.0 * h[axis] * extent[axis])
        return (at(plus, var) - at(minus, var)) * factor

    def d2(var, axis):
        plus, minus = off[axis]
        factor = phys_scale(var) / ((h[axis] * extent[axis]) ** 2)
        return (at(plus, var) + at(minus, var) - at(0, var) * 2.0) * factor

    def value(var):
        return at(0, var) * std[var] + mean[var]

    u = value("u")
    w = value("w")
    T = value("T")
    S = value("S")

    # Buoyancy anomaly against the background stratification at the
    # physical depth of each (clamped) sample point.
    h_arr = np.array([stencil.h_t, stencil.h_z, stencil.h_x])
    z_hat = np.clip(pts, h_arr, 1.0 - h_arr)[:, 1:2]
    z_phys = z_hat * scales.extent_z
    rho = eos_density(T, S, params)
    rho_b = eos_density(scales.background_T(z_phys), scales.background_S(z_phys),
                        params)
    buoyancy = (rho - Tensor(np.asarray(rho_b, dtype=rho.dtype))) \
        * (params.g / params.rho0)

    terms = {
        "continuity": [d1("u", "x"), d1("w", "z")],
        "x_momentum": [d1("u", "t"), u * d1("u", "x"), w * d1("u", "z"),
                       d1("p", "x") * (1.0 / params.rho0),
                       d2("u", "x") * (-params.nu_h),
                       d2("u", "z") * (-params.nu_z)],
        "z_momentum": [d1("w", "t"), u * d1("w", "x"), w * d1("w", "z"),
                       d1("p", "z") * (1.0 / params.rho0), buoyancy,
                       d2("w", "x") * (-params.nu_h),
                       d2("w", "z") * (-params.nu_z)],
        "T_transport": [d1("T", "t"), u * d1("T", "x"), w * d1("T", "z")],
        "S_transport": [d1("S", "t"), u * d1("S", "x"), w * d1("S", "z")],
    }
    residuals = {}
    for eq, eq_terms in terms.items():
        r = eq_terms[0]
        for t in eq_terms[1:]:
            r = r + t
        residuals[eq] = r
    return residuals, terms


def truth_equation_scales(block, params: PhysParams = PhysParams()) -> dict[str, float]:
    """Per-equation dominant-term RMS measured on a truth block.

    ``block`` is a normalized FieldGrid (norm stats attached).  Scales
    derived from the data stay fixed while the model trains, unlike scales
    derived from the model's own terms, which shrink as the model flattens
    its fields and then amplify the physics gradient without bound.
    Pressure terms are unknown for the truth and are not candidates.
    """
    if block.norm is None:
        raise ContractError("truth_equation_scales needs a normalized block")
    mean, std = block.norm.mean, block.norm.std
    phys = {n: block.vars[n].astype(np.float64) * std[n] + mean[n]
            for n in ("T", "S", "u", "w")}
    spacing = (block.dt, block.dz, block.dx)
    grads = {n: np.gradient(v, *spacing) for n, v in phys.items()}
    fluid = np.broadcast_to(~block.terrain, phys["u"].shape)

    def rms(a):
        return float(np.sqrt(np.mean(a[fluid] ** 2)))

    u, w = phys["u"], phys["w"]
    rho = eos_density(phys["T"], phys["S"], params)
    rho_anom = rho - rho.mean(axis=(0, 2), keepdims=True)
    # The dominant x-momentum term in stratified flow is the pressure
    # gradient.  The data has no pressure field, but the hydrostatic
    # anomaly integral g * cumsum(rho') dz estimates it well; without this
    # candidate the x-momentum scale is set by the (tiny) advection terms
    # and any pressure field that balances buoyancy in z is punished in x.
    p_hydro = params.g * np.cumsum(rho_anom, axis=1) * block.dz
    candidates = {
        "continuity": [grads["u"][2], grads["w"][1]],
        "x_momentum": [grads["u"][0], u * grads["u"][2], w * grads["u"][1],
                       np.gradient(p_hydro, block.dx, axis=2) / params.rho0],
        "z_momentum": [grads["w"][0], u * grads["w"][2], w * grads["w"][1],
                       rho_anom * (params.g / params.rho0)],
        "T_transport": [grads["T"][0], u * grads["T"][2], w * grads["T"][1]],
        "S_transport": [grads["S"][0], u * grads["S"][2], w * grads["S"][1]],
    }
    return {eq: max(max(rms(t) for t in terms), 1e-12)
            for eq, terms in candidates.items()}


def hydrostatic_pressure_scale(block, params: PhysParams = PhysParams()) -> float:
    """g * rms(rho') * depth for a normalized truth block.

    This is the size of pressure anomaly required to balance the buoyancy
    of the block's density perturbations over its depth, which is what the
    auxiliary pressure channel must be able to express for the momentum
    residuals to be reducible.
    """
    if block.norm is None:
        raise ContractError("hydrostatic_pressure_scale needs a normalized block")
    mean, std = block.norm.mean, block.norm.std
    T = block.vars["T"].astype(np.float64) * std["T"] + mean["T"]
    S = block.vars["S"].astype(np.float64) * std["S"] + mean["S"]
    rho = eos_density(T, S, params)
    rho_anom = rho - rho.mean(axis=(0, 2), keepdims=True)
    fluid = np.broadcast_to(~block.terrain, rho.shape)
    rms = float(np.sqrt(np.mean(rho_anom[fluid] ** 2)))
    depth = (block.shape[1] - 1) * block.dz
    return max(params.g * rms * depth, 1e-12)


def equation_scales(terms: dict) -> dict[str, float]:
    """Gradient-detached dominant-term RMS per equation (floored at 1e-12)."""
    scales = {}
    for eq, eq_terms in terms.items():
        rms = max(float(np.sqrt(np.mean(t.data.astype(np.float64) ** 2)))
                  for t in eq_terms)
        scales[eq] = max(rms, 1e-12)
    return scales


def pde_loss(residuals: dict, scales: dict[str, float] | None = None,
             terms: dict | None = None):
    """Mean of squared non-dimensionalized residuals, averaged over equations.

    ``scales`` may be passed explicitly (e.g. frozen values reused across a
    fine-tuning run); otherwise they are derived from ``terms``.
    """
    if scales is None:
        if terms is None:
            raise ContractError("pde_loss needs either precomputed scales or terms")
        scales = equation_scales(terms)
    total = None
    for eq, r in residuals.items():
        contrib = reduce_mean(r * r) * (1.0 / scales[eq] ** 2)
        total = contrib if total is None else total + contrib
    return total * (1.0 / len(residuals))


def total_loss(data_loss: Tensor, physics_loss: Tensor, gamma: float = 0.3):
    """Convex blend (1 - gamma) * data + gamma * physics."""
    gamma = float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"gamma must lie in [0, 1], got {gamma}")
    return data_loss * (1.0 - gamma) + physics_loss * gamma
