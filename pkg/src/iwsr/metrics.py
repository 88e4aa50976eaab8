"""Reconstruction quality metrics.

All metrics restrict themselves to fluid cells: PSNR and the kinetic-energy
error ignore terrain cells entirely, SSIM keeps only windows centered on
fluid.  The spectral error compares orthonormal FFT magnitude spectra, so it
is invariant under circular shifts of the field.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import ndimage

from .autodiff import ContractError
from .fields import FieldGrid, VAR_NAMES

PSNR_CAP_DB = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


class MetricsWarning(UserWarning):
    pass


def _fluid_selector(shape, fluid):
    if fluid is None:
        return np.ones(shape, dtype=bool)
    fluid = np.asarray(fluid, dtype=bool)
    if fluid.shape == shape:
        return fluid
    if fluid.shape == shape[-2:]:
        return np.broadcast_to(fluid, shape)
    raise ContractError(f"fluid mask shape {fluid.shape} does not match "
                        f"field shape {shape}")


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ContractError(f"shape mismatch: prediction {pred.shape} vs "
                            f"truth {truth.shape}")
    if pred.size == 0:
        raise ContractError("metrics on empty fields")
    return pred, truth


def psnr(pred, truth, fluid=None) -> tuple[float, bool]:
    """Peak signal-to-noise ratio in dB over fluid cells.

    The peak is the truth's fluid value range.  A bit-exact reconstruction
    has infinite PSNR; it is reported as the 99 dB cap with the second
    return value flagging exactness.
    """
    pred, truth = _check_pair(pred, truth)
    sel = _fluid_selector(truth.shape, fluid)
    if not sel.any():
        raise ContractError("fluid mask selects no cells")
    diff = pred[sel] - truth[sel]
    mse = float(np.mean(diff * diff))
    peak = float(truth[sel].max() - truth[sel].min())
    if mse == 0.0:
        return PSNR_CAP_DB, True
    if peak == 0.0:
        raise ContractError("truth is constant over fluid; PSNR peak undefined")
    return float(10.0 * np.log10(peak ** 2 / mse)), False


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim_slice(pred, truth, fluid=None, data_range=None,
               window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean structural similarity of one (z, x) slice over fluid centers."""
    pred, truth = _check_pair(pred, truth)
    if pred.ndim != 2:
        raise ContractError(f"ssim_slice expects a 2-d slice, got {pred.shape}")
    sel = _fluid_selector(truth.shape, fluid)
    if not sel.any():
        raise ContractError("fluid mask selects no cells")
    shortest = min(pred.shape)
    if window > shortest:
        window = shortest if shortest % 2 else shortest - 1
        if window < 1:
            raise ContractError("slice too small for any SSIM window")
        warnings.warn(f"slice {pred.shape} smaller than the "
                      f"{SSIM_WINDOW}x{SSIM_WINDOW} SSIM window; shrunk to "
                      f"{window}x{window}", MetricsWarning)
    if data_range is None:
        data_range = float(truth[sel].max() - truth[sel].min())
    if data_range == 0.0:
        raise ContractError("truth is constant over fluid; SSIM range undefined")
    kern = _gaussian_kernel(window, sigma)

    def smooth(a):
        return ndimage.correlate(a, kern, mode="reflect")

    mu1, mu2 = smooth(pred), smooth(truth)
    s11 = smooth(pred * pred) - mu1 * mu1
    s22 = smooth(truth * truth) - mu2 * mu2
    s12 = smooth(pred * truth) - mu1 * mu2
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    ssim_map = (((2 * mu1 * mu2 + c1) * (2 * s12 + c2))
                / ((mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)))
    return float(ssim_map[sel].mean())


def ssim(pred, truth, fluid=None, data_range=None) -> float:
    """SSIM of a (t, z, x) stack: slice-wise SSIM averaged over time."""
    pred, truth = _check_pair(pred, truth)
    if pred.ndim == 2:
        return ssim_slice(pred, truth, fluid, data_range)
    if pred.ndim != 3:
        raise ContractError(f"ssim expects (t, z, x) or (z, x), got {pred.shape}")
    sel = _fluid_selector(truth.shape, fluid)
    if data_range is None:
        if not sel.any():
            raise ContractError("fluid mask selects no cells")
        data_range = float(truth[sel].max() - truth[sel].min())
    return float(np.mean([ssim_slice(pred[t], truth[t], sel[t],
                                     data_range=data_range)
                          for t in range(pred.shape[0])]))


def ke_error(pred_u, pred_w, true_u, true_w, fluid=None) -> float:
    """Relative error of the domain-integrated kinetic energy."""
    pred_u, true_u = _check_pair(pred_u, true_u)
    pred_w, true_w = _check_pair(pred_w, true_w)
    sel = _fluid_selector(true_u.shape, fluid)
    ke_pred = 0.5 * float(np.sum(pred_u[sel] ** 2 + pred_w[sel] ** 2))
    ke_true = 0.5 * float(np.sum(true_u[sel] ** 2 + true_w[sel] ** 2))
    if ke_true == 0.0:
        raise ContractError("true kinetic energy is zero; relative error undefined")
    return abs(ke_pred - ke_true) / ke_true


def fft_mse(pred, truth) -> float:
    """MSE between orthonormal FFT magnitude spectra."""
    pred, truth = _check_pair(pred, truth)
    mag_p = np.abs(np.fft.fftn(pred, norm="ortho"))
    mag_t = np.abs(np.fft.fftn(truth, norm="ortho"))
    return float(np.mean((mag_p - mag_t) ** 2))


def eval_report(pred: FieldGrid, truth: FieldGrid) -> dict[str, float]:
    """Per-variable and aggregate metrics of a reconstruction."""
    if pred.shape != truth.shape:
        raise ContractError(f"grid shape mismatch: {pred.shape} vs {truth.shape}")
    fluid = truth.fluid
    report: dict[str, float] = {}
    for name in VAR_NAMES:
        p, t = pred.vars[name], truth.vars[name]
        value, _ = psnr(p, t, fluid)
        report[f"{name}.psnr_db"] = value
        report[f"{name}.ssim"] = ssim(p, t, fluid)
        report[f"{name}.fft_mse"] = fft_mse(p, t)
    report["ke_error"] = ke_error(pred.vars["u"], pred.vars["w"],
                                  truth.vars["u"], truth.vars["w"], fluid)
    report["psnr_db"] = float(np.mean([report[f"{n}.psnr_db"] for n in VAR_NAMES]))
    report["ssim"] = float(np.mean([report[f"{n}.ssim"] for n in VAR_NAMES]))
    report["fft_mse"] = float(np.mean([report[f"{n}.fft_mse"] for n in VAR_NAMES]))
    return report


def format_report(report: dict[str, float]) -> str:
    """Stable, diff-friendly serialization: sorted 'key: value' lines."""
    return "\n".join(f"{k}: {report[k]:.6f}" for k in sorted(report)) + "\n"


def comparison_table(reports: dict[str, dict[str, float]],
                     columns=("psnr_db", "ssim", "ke_error", "fft_mse")) -> str:
    """Fixed-width table comparing evaluation arms (rows) by metric."""
    if not reports:
        raise ContractError("comparison_table needs at least one report")
    name_w = max(len("method"), max(len(n) for n in reports))
    header = "method".ljust(name_w) + "".join(f"  {c:>12}" for c in columns)
    lines = [header, "-" * len(header)]
    for name, rep in reports.items():
        cells = "".join(f"  {rep[c]:>12.6f}" for c in columns)
        lines.append(name.ljust(name_w) + cells)
    return "\n".join(lines) + "\n"
