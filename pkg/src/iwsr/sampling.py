"""Adaptive edge-biased sampling of training points.

Training points live in the normalized (t, z, x) unit cube of one block.  A
fraction of every batch is drawn near terrain edges -- fluid cells with a
4-adjacent solid neighbor in the (z, x) plane -- where the flow fields have
their sharpest gradients; the rest is drawn uniformly over fluid cells.  The
edge fraction is adapted between epochs from the ratio of the running edge
and regular losses.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError


class SamplingWarning(UserWarning):
    """Raised (as a warning) when rejection sampling could not place every
    edge point inside fluid and fell back to edge-cell centers."""


@dataclass
class EdgeSet:
    """Row-major (k, j) indices of fluid cells bordering terrain."""

    cells: np.ndarray          # [L, 2] int64, rows (z index, x index)
    shape: tuple[int, int]     # (nz, nx) of the originating mask

    def __len__(self) -> int:
        return len(self.cells)


def extract_edges(terrain: np.ndarray) -> EdgeSet:
    """Fluid cells with at least one solid 4-neighbor, in row-major order.

    ``terrain`` is the (nz, nx) boolean mask, True where solid.  Domain
    borders do not count as terrain.
    """
    solid = np.asarray(terrain, dtype=bool)
    if solid.ndim != 2:
        raise ContractError(f"terrain mask must be 2-d, got shape {solid.shape}")
    near_solid = np.zeros_like(solid)
    near_solid[1:, :] |= solid[:-1, :]
    near_solid[:-1, :] |= solid[1:, :]
    near_solid[:, 1:] |= solid[:, :-1]
    near_solid[:, :-1] |= solid[:, 1:]
    edge = ~solid & near_solid
    cells = np.argwhere(edge)  # argwhere scans row-major already
    return EdgeSet(cells.astype(np.int64), solid.shape)


@dataclass
class SamplingConfig:
    edge_fraction: float = 0.5   # initial edge share a
    min_fraction: float = 0.05
    max_fraction: float = 0.95
    radius: float = 1.5          # offset radius around edge cells, in cells
    max_rounds: int = 10         # rejection-sampling rounds
    kappa: float = 0.5           # adaptation exponent

    def __post_init__(self):
        if not (0.0 <= self.min_fraction <= self.edge_fraction
                <= self.max_fraction <= 1.0):
            raise ContractError(
                "need 0 <= min_fraction <= edge_fraction <= max_fraction <= 1, "
                f"got {self.min_fraction}, {self.edge_fraction}, {self.max_fraction}")
        if self.radius < 0 or self.max_rounds < 1:
            raise ContractError("radius must be >= 0 and max_rounds >= 1")


def _point_is_fluid(points: np.ndarray, solid: np.ndarray) -> np.ndarray:
    """Whether each normalized (t, z, x) point falls inside a fluid cell."""
    nz, nx = solid.shape
    inside = np.all((points >= 0.0) & (points <= 1.0), axis=1)
    k = np.clip((points[:, 1] * nz).astype(np.int64), 0, nz - 1)
    j = np.clip((points[:, 2] * nx).astype(np.int64), 0, nx - 1)
    return inside & ~solid[k, j]


def sample_edge_points(edges: EdgeSet, terrain: np.ndarray, count: int,
                       rng: np.random.Generator,
                       config: SamplingConfig = SamplingConfig()) -> np.ndarray:
    """[count, 3] normalized points near terrain edges, all inside fluid.

    Each point starts from a random edge-cell center with a uniform time
    coordinate and receives a random (z, x) offset inside a disk of
    ``config.radius`` cells.  Offsets landing outside the domain or in solid
    cells are redrawn for up to ``config.max_rounds`` rounds; stubborn points
    fall back to their (always fluid) cell centers with a warning.
    """
    if count < 0:
        raise ContractError(f"count must be >= 0, got {count}")
    if count == 0:
        return np.zeros((0, 3), dtype=np.float64)
    if len(edges) == 0:
        raise ContractError("cannot draw edge points: the edge set is empty")
    solid = np.asarray(terrain, dtype=bool)
    nz, nx = edges.shape
    picks = edges.cells[rng.integers(0, len(edges), size=count)]
    centers = np.empty((count, 3), dtype=np.float64)
    centers[:, 0] = rng.uniform(0.0, 1.0, size=count)
    centers[:, 1] = (picks[:, 0] + 0.5) / nz
    centers[:, 2] = (picks[:, 1] + 0.5) / nx

    points = centers.copy()
    pending = np.ones(count, dtype=bool)
    for _ in range(config.max_rounds):
        if not pending.any():
            break
        m = int(pending.sum())
        # Uniform draw over a disk of config.radius cells.
        theta = rng.uniform(0.0, 2.0 * np.pi, size=m)
        rad = config.radius * np.sqrt(rng.uniform(0.0, 1.0, size=m))
        trial = centers[pending].copy()
        trial[:, 1] += rad * np.sin(theta) / nz
        trial[:, 2] += rad * np.cos(theta) / nx
        ok = _point_is_fluid(trial, solid)
        idx = np.flatnonzero(pending)
        points[idx[ok]] = trial[ok]
        pending[idx[ok]] = False
    if pending.any():
        warnings.warn(
            f"{int(pending.sum())} of {count} edge points kept their cell "
            f"centers after {config.max_rounds} rejection rounds",
            SamplingWarning)
        points[pending] = centers[pending]
    return points


def sample_fluid_points(terrain: np.ndarray, count: int,
                        rng: np.random.Generator) -> np.ndarray:
    """[count, 3] points uniform over fluid cells (uniform jitter per cell)."""
    if count < 0:
        raise ContractError(f"count must be >= 0, got {count}")
    solid = np.asarray(terrain, dtype=bool)
    fluid_cells = np.argwhere(~solid)
    if len(fluid_cells) == 0:
        raise ContractError("terrain mask has no fluid cells to sample")
    nz, nx = solid.shape
    picks = fluid_cells[rng.integers(0, len(fluid_cells), size=count)]
    points = np.empty((count, 3), dtype=np.float64)
    points[:, 0] = rng.uniform(0.0, 1.0, size=count)
    points[:, 1] = (picks[:, 0] + rng.uniform(0.0, 1.0, size=count)) / nz
    points[:, 2] = (picks[:, 1] + rng.uniform(0.0, 1.0, size=count)) / nx
    return points


def assemble_batch(edges: EdgeSet, terrain: np.ndarray, count: int,
                   edge_fraction: float, rng: np.random.Generator,
                   config: SamplingConfig = SamplingConfig()):
    """(points [count, 3], is_edge [count]) mixing edge and uniform samples.

    ``round(edge_fraction * count)`` points come from the edge sampler (all
    of them regular if the block has no terrain edges); the remainder is
    uniform over fluid.  Order is edge block first, then regular block.
    """
    if count < 1:
        raise ContractError(f"batch needs at least one point, got {count}")
    if not 0.0 <= edge_fraction <= 1.0:
        raise ContractError(f"edge_fraction must lie in [0, 1], got {edge_fraction}")
    n_edge = int(round(edge_fraction * count)) if len(edges) else 0
    n_reg = count - n_edge
    parts, flags = [], []
    if n_edge:
        parts.append(sample_edge_points(edges, terrain, n_edge, rng, config))
        flags.append(np.ones(n_edge, dtype=bool))
    if n_reg:
        parts.append(sample_fluid_points(terrain, n_reg, rng))
        flags.append(np.zeros(n_reg, dtype=bool))
    return np.concatenate(parts, axis=0), np.concatenate(flags)


def update_edge_fraction(edge_fraction: float, edge_loss: float,
                         regular_loss: float,
                         config: SamplingConfig = SamplingConfig()) -> float:
    """Power-law adaptation a' = clamp(a * (L_edge / L_regular)^kappa).

    Non-finite or non-positive running losses leave the fraction unchanged.
    """
    if not (np.isfinite(edge_loss) and np.isfinite(regular_loss)
            and edge_loss > 0.0 and regular_loss > 0.0):
        return float(edge_fraction)
    a = edge_fraction * (edge_loss / regular_loss) ** config.kappa
    return float(np.clip(a, config.min_fraction, config.max_fraction))
