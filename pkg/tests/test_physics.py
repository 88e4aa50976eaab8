import numpy as np
import pytest

from iwsr.autodiff import (ContractError, Tensor, concat, matmul, reduce_mean,
                           reshape)
from iwsr.decoder import Pcn, PcnConfig, interpolate_latent
from iwsr.fields import NormStats
from iwsr.physics import (EQUATIONS, GridScales, PhysParams, StencilConfig,
                          StencilError, eos_density, equation_scales,
                          pde_loss, pde_residuals, total_loss,
                          truth_equation_scales)

from gradcheck import check_gradients


def make_scales(extents=(200.0, 50.0, 400.0),
                mean=None, std=None, **kw):
    mean = {"T": 10.0, "S": 35.0, "u": 0.0, "w": 0.0} if mean is None else mean
    std = {"T": 2.0, "S": 0.5, "u": 0.1, "w": 0.05} if std is None else std
    return GridScales(extents[0], extents[1], extents[2],
                      NormStats(mean, std), **kw)


def linear_model(W, b):
    """Normalized predictions as an affine map of (t, z, x)."""
    Wt, bt = Tensor(np.asarray(W, dtype=np.float64)), Tensor(np.asarray(b, dtype=np.float64))

    def model(pts):
        return matmul(pts, Wt) + reshape(bt, (1, -1))
    return model


# ---------------------------------------------------------------------------
# equation of state
# ---------------------------------------------------------------------------

def test_eos_reference_values():
    p = PhysParams()
    assert eos_density(p.T_ref, p.S_ref, p) == pytest.approx(1025.0, abs=1e-9)
    # One degree of warming at reference salinity: 1025 * (1 - 2e-4).
    assert eos_density(p.T_ref + 1.0, p.S_ref, p) == pytest.approx(1024.795, abs=1e-9)
    # One psu of salinification at reference temperature.
    assert eos_density(p.T_ref, p.S_ref + 1.0, p) == pytest.approx(
        1025.0 * (1.0 + 7.6e-4), abs=1e-9)


def test_eos_accepts_tensors():
    T = Tensor(np.array([10.0, 11.0]))
    S = Tensor(np.array([35.0, 35.0]))
    rho = eos_density(T, S)
    np.testing.assert_allclose(rho.data, [1025.0, 1024.795], atol=1e-9)


# ---------------------------------------------------------------------------
# residual exactness on analytic fields
# ---------------------------------------------------------------------------

def test_linear_fields_reproduce_analytic_residuals():
    rng = np.random.default_rng(0)
    W = rng.standard_normal((3, 5)) * 0.5
    b = rng.standard_normal(5) * 0.1
    scales = make_scales()
    params = PhysParams()
    st = StencilConfig(0.05, 0.05, 0.05)
    pts = rng.uniform(0.1, 0.9, size=(40, 3))

    residuals, _ = pde_residuals(linear_model(W, b), pts, scales, params, st)

    # Independent oracle from the closed-form derivatives of the affine map.
    L = {"t": scales.extent_t, "z": scales.extent_z, "x": scales.extent_x}
    std = dict(scales.norm.std)
    mean = dict(scales.norm.mean)
    p_scale = scales.pressure_scale(params)
    cols = {"T": 0, "S": 1, "u": 2, "w": 3, "p": 4}
    axes = {"t": 0, "z": 1, "x": 2}

    def dv(var, axis):
        s = p_scale if var == "p" else std[var]
        return s * W[axes[axis], cols[var]] / L[axis]

    c = np.clip(pts, 0.05, 0.95)

    def phys(var):
        return mean[var] + std[var] * (c @ W[:, cols[var]] + b[cols[var]])

    u, w, T, S = phys("u"), phys("w"), phys("T"), phys("S")
    rho = eos_density(T, S, params)
    rho_b = eos_density(mean["T"], mean["S"], params)
    expected = {
        "continuity": dv("u", "x") + dv("w", "z"),
        "x_momentum": dv("u", "t") + u * dv("u", "x") + w * dv("u", "z")
                      + dv("p", "x") / params.rho0,
        "z_momentum": dv("w", "t") + u * dv("w", "x") + w * dv("w", "z")
                      + dv("p", "z") / params.rho0
                      + params.g * (rho - rho_b) / params.rho0,
        "T_transport": dv("T", "t") + u * dv("T", "x") + w * dv("T", "z"),
        "S_transport": dv("S", "t") + u * dv("S", "x") + w * dv("S", "z"),
    }
    assert set(residuals) == set(EQUATIONS)
    for eq in EQUATIONS:
        got = residuals[eq].data[:, 0]
        np.testing.assert_allclose(got, expected[eq], rtol=1e-6, atol=1e-9)


def quadratic_u_model(pts):
    x = pts[:, 2:3]
    u = x * x
    zero = x * 0.0
    return concat([zero, zero, u, zero, zero], axis=1)


def test_quadratic_field_first_and_second_derivatives():
    # u(x) = x^2 in normalized units: central differences are exact, so
    # continuity = 2x / L_x and the x-momentum viscous term = -2 nu_h / L_x^2.
    scales = make_scales(std={"T": 1.0, "S": 1.0, "u": 1.0, "w": 1.0},
                         mean={"T": 10.0, "S": 35.0, "u": 0.0, "w": 0.0})
    params = PhysParams()
    st = StencilConfig(0.02, 0.02, 0.02)
    pts = np.random.default_rng(1).uniform(0.1, 0.9, size=(25, 3))
    residuals, _ = pde_residuals(quadratic_u_model, pts, scales, params, st)
    xc = np.clip(pts[:, 2], 0.02, 0.98)
    Lx = scales.extent_x
    np.testing.assert_allclose(residuals["continuity"].data[:, 0],
                               2.0 * xc / Lx, rtol=1e-9)
    expected_xmom = xc ** 2 * (2.0 * xc / Lx) - params.nu_h * 2.0 / Lx ** 2
    np.testing.assert_allclose(residuals["x_momentum"].data[:, 0],
                               expected_xmom, rtol=1e-7, atol=1e-12)
    # T = const and S = const: transport residuals and buoyancy vanish.
    np.testing.assert_allclose(residuals["T_transport"].data, 0.0, atol=1e-12)
    np.testing.assert_allclose(residuals["z_momentum"].data, 0.0, atol=1e-12)


def test_truncation_error_is_second_order():
    # u(x) = x^4: the central first difference has error h^2 * u'''(x) / 6,
    # so halving h must shrink the continuity error by about 4.
    def quartic_model(pts):
        x = pts[:, 2:3]
        u = (x * x) * (x * x)
        zero = x * 0.0
        return concat([zero, zero, u, zero, zero], axis=1)

    scales = make_scales(std={"T": 1.0, "S": 1.0, "u": 1.0, "w": 1.0})
    pts = np.linspace(0.3, 0.7, 9)[:, None] * np.ones((1, 3))
    errs = []
    for h in (0.08, 0.04):
        st = StencilConfig(h, h, h)
        residuals, _ = pde_residuals(quartic_model, pts, scales, stencil=st)
        exact = 4.0 * pts[:, 2] ** 3 / scales.extent_x
        errs.append(np.abs(residuals["continuity"].data[:, 0] - exact).max())
    ratio = errs[0] / errs[1]
    assert 3.5 < ratio < 4.5


def test_background_profile_enters_buoyancy():
    # With T equal to the background profile everywhere the anomaly is zero;
    # against a constant background it is not.
    def model(pts):
        z = pts[:, 1:2]
        zero = z * 0.0
        return concat([z, zero, zero, zero, zero], axis=1)

    std = {"T": 1.0, "S": 1.0, "u": 1.0, "w": 1.0}
    mean = {"T": 0.0, "S": 35.0, "u": 0.0, "w": 0.0}
    pts = np.random.default_rng(2).uniform(0.2, 0.8, size=(10, 3))
    st = StencilConfig(0.05, 0.05, 0.05)

    matched = make_scales(std=std, mean=mean,
                          background_T=lambda z: z / 50.0)  # extent_z = 50
    res_m, _ = pde_residuals(model, pts, matched, stencil=st)
    np.testing.assert_allclose(res_m["z_momentum"].data, 0.0, atol=1e-12)

    constant = make_scales(std=std, mean=mean)
    res_c, _ = pde_residuals(model, pts, constant, stencil=st)
    assert np.abs(res_c["z_momentum"].data).max() > 1e-6


# ---------------------------------------------------------------------------
# loss assembly
# ---------------------------------------------------------------------------

def test_equation_scales_balance_disparate_magnitudes():
    rng = np.random.default_rng(3)
    W = rng.standard_normal((3, 5))
    # Exaggerate velocity stds so momentum terms dwarf tracer transport.
    scales = make_scales(std={"T": 1e-3, "S": 1e-3, "u": 50.0, "w": 20.0})
    pts = rng.uniform(0.1, 0.9, size=(30, 3))
    residuals, terms = pde_residuals(linear_model(W, np.zeros(5)), pts, scales,
                                     stencil=StencilConfig(0.05, 0.05, 0.05))
    eq_scales = equation_scales(terms)
    loss = pde_loss(residuals, scales=eq_scales)
    per_eq = {eq: float(np.mean((residuals[eq].data / eq_scales[eq]) ** 2))
              for eq in residuals}
    # After non-dimensionalization every equation sits within a few orders
    # of unity; raw magnitudes differ by ~1e8.
    assert all(1e-4 < v < 1e2 for v in per_eq.values())
    assert np.isfinite(float(loss.data))


def test_truth_scales_reflect_data_magnitudes():
    from iwsr.fields import (GenConfig, TopographyProfile, generate_synthetic,
                             normalize, terrain_fill)
    cfg = GenConfig(nt=8, nz=16, nx=64, dz=500.0 / 16, dx=200.0)
    grid, stats = normalize(terrain_fill(generate_synthetic(
        cfg, TopographyProfile("sill", sill_width=2000.0))))
    scales = truth_equation_scales(grid)
    assert set(scales) == set(EQUATIONS)
    assert all(np.isfinite(s) and s > 0 for s in scales.values())
    # Independent interior central-difference oracle for the continuity
    # scale (np.gradient only differs on the one-cell boundary rim).
    u = grid.vars["u"].astype(np.float64) * stats.std["u"] + stats.mean["u"]
    w = grid.vars["w"].astype(np.float64) * stats.std["w"] + stats.mean["w"]
    du_dx = (u[:, :, 2:] - u[:, :, :-2]) / (2 * grid.dx)
    dw_dz = (w[:, 2:, :] - w[:, :-2, :]) / (2 * grid.dz)
    oracle = max(np.sqrt(np.mean(du_dx ** 2)), np.sqrt(np.mean(dw_dz ** 2)))
    assert scales["continuity"] == pytest.approx(oracle, rel=0.3)
    # Doubling the velocity std doubles the velocity-derivative scale.
    stats2 = type(stats)(dict(stats.mean),
                         {**stats.std, "u": 2 * stats.std["u"],
                          "w": 2 * stats.std["w"]})
    grid2 = grid.copy()
    grid2.norm = stats2
    assert truth_equation_scales(grid2)["continuity"] == pytest.approx(
        2 * scales["continuity"], rel=1e-9)


def test_truth_scales_x_momentum_uses_hydrostatic_pressure_gradient():
    # Still water with a horizontal temperature ramp: every advection term
    # is zero, so the x-momentum scale must come from the hydrostatic
    # pressure-gradient candidate g * d/dx cumsum(rho') dz / rho0, which has
    # a closed form for a linear ramp.
    from iwsr.fields import FieldGrid
    p = PhysParams()
    nt, nz, nx = 2, 4, 6
    dz, dx = 10.0, 50.0
    c = 0.01  # degC per x-cell
    T = 15.0 + c * np.arange(nx)[None, None, :] * np.ones((nt, nz, 1))
    zeros = np.zeros((nt, nz, nx))
    grid = FieldGrid({"T": T, "S": np.full((nt, nz, nx), 35.0),
                      "u": zeros.copy(), "w": zeros.copy()},
                     np.zeros((nz, nx), dtype=bool), 60.0, dz, dx,
                     terrain_filled=True,
                     norm=NormStats({"T": 0.0, "S": 0.0, "u": 0.0, "w": 0.0},
                                    {"T": 1.0, "S": 1.0, "u": 1.0, "w": 1.0}))
    scales = truth_equation_scales(grid, p)
    k = np.arange(1, nz + 1)
    expected = (p.g * dz * p.alpha * (c / dx)
                * float(np.sqrt(np.mean(k.astype(float) ** 2))))
    assert scales["x_momentum"] == pytest.approx(expected, rel=1e-9)


def test_truth_scales_need_normalization():
    from iwsr.fields import GenConfig, TopographyProfile, generate_synthetic
    grid = generate_synthetic(GenConfig(nt=4, nz=8, nx=16, dz=62.5, dx=100.0),
                              TopographyProfile("flat"))
    with pytest.raises(ContractError, match="normalized"):
        truth_equation_scales(grid)


def test_pressure_scale_default_and_override():
    p = PhysParams()
    scales = make_scales(std={"T": 2.0, "S": 0.5, "u": 0.1, "w": 0.05})
    assert scales.pressure_scale(p) == pytest.approx(
        1025.0 * (0.1 ** 2 + 0.05 ** 2))
    assert make_scales(p_scale=1500.0).pressure_scale(p) == 1500.0


def test_hydrostatic_pressure_scale_closed_form():
    from iwsr.fields import FieldGrid
    from iwsr.physics import hydrostatic_pressure_scale
    p = PhysParams()
    nt, nz, nx = 2, 3, 4
    dz = 100.0
    a = 0.5  # degC perturbation amplitude
    # T = f(z) plus a +/-a checker along x: zero mean and unit rms at every
    # depth, so rho' = -rho0 * alpha * a * (+/-1) exactly.
    s = np.tile(np.array([1.0, -1.0, 1.0, -1.0]), (nt, nz, 1))
    T = 20.0 - 0.01 * np.arange(nz, dtype=np.float64)[None, :, None] + a * s
    grid = FieldGrid(
        vars={"T": T, "S": np.full((nt, nz, nx), 35.0),
              "u": np.zeros((nt, nz, nx)), "w": np.zeros((nt, nz, nx))},
        terrain=np.zeros((nz, nx), dtype=bool), dt=60.0, dz=dz, dx=50.0,
        terrain_filled=True,
        norm=NormStats({"T": 0.0, "S": 0.0, "u": 0.0, "w": 0.0},
                       {"T": 1.0, "S": 1.0, "u": 1.0, "w": 1.0}))
    expected = p.g * (p.rho0 * p.alpha * a) * (nz - 1) * dz
    assert hydrostatic_pressure_scale(grid, p) == pytest.approx(expected,
                                                                rel=1e-9)


def test_hydrostatic_pressure_scale_needs_normalization():
    from iwsr.fields import GenConfig, TopographyProfile, generate_synthetic
    from iwsr.physics import hydrostatic_pressure_scale
    grid = generate_synthetic(GenConfig(nt=4, nz=8, nx=16, dz=62.5, dx=100.0),
                              TopographyProfile("flat"))
    with pytest.raises(ContractError, match="normalized"):
        hydrostatic_pressure_scale(grid)


def test_pde_loss_requires_scales_or_terms():
    with pytest.raises(ContractError):
        pde_loss({"continuity": Tensor(np.ones((3, 1)))})


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    pcn = Pcn(PcnConfig(latent_channels=2, depth=2, width=4),
              rng=np.random.default_rng(5))
    params = list(pcn.named_parameters().values())
    for p in params:
        p.data = p.data.astype(np.float64)
    latent = Tensor(rng.standard_normal((2, 3, 4, 4)))
    latent.requires_grad = True
    pts = rng.uniform(0.2, 0.8, size=(5, 3))
    scales = make_scales(extents=(2.0, 1.0, 3.0))
    st = StencilConfig(0.1, 0.1, 0.1)

    def model(p_tensor):
        return pcn(interpolate_latent(latent, p_tensor), p_tensor)

    residuals0, terms0 = pde_residuals(model, pts, scales, stencil=st)
    frozen = equation_scales(terms0)

    def f():
        residuals, _ = pde_residuals(model, pts, scales, stencil=st)
        phys = pde_loss(residuals, scales=frozen)
        pred = model(Tensor(pts))
        data = reduce_mean(pred * pred)
        return total_loss(data, phys, gamma=0.3)

    check_gradients(f, [latent] + params, step=1e-6, rtol=1e-5)


def test_total_loss_blend_and_validation():
    d, p = Tensor(np.array(2.0)), Tensor(np.array(10.0))
    assert float(total_loss(d, p, 0.3).data) == pytest.approx(0.7 * 2 + 0.3 * 10)
    assert float(total_loss(d, p, 0.0).data) == pytest.approx(2.0)
    with pytest.raises(ContractError, match="gamma"):
        total_loss(d, p, 1.5)


# ---------------------------------------------------------------------------
# configuration guards
# ---------------------------------------------------------------------------

def test_stencil_rejects_degenerate_steps():
    with pytest.raises(StencilError, match="1e-06|precision"):
        StencilConfig(1e-7, 0.1, 0.1)
    with pytest.raises(StencilError):
        StencilConfig(0.1, float("nan"), 0.1)
    with pytest.raises(StencilError, match="half"):
        StencilConfig(0.1, 0.1, 0.7)


def test_stencil_default_is_half_a_cell():
    st = StencilConfig.for_grid(16, 64, 128)
    assert (st.h_t, st.h_z, st.h_x) == (0.5 / 16, 0.5 / 64, 0.5 / 128)


def test_empty_points_rejected():
    with pytest.raises(ContractError, match="empty"):
        pde_residuals(quadratic_u_model, np.zeros((0, 3)), make_scales())


def test_nonpositive_extent_rejected():
    with pytest.raises(StencilError, match="extent"):
        make_scales(extents=(0.0, 50.0, 400.0))
