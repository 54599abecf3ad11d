"""Strict backward-reachable tubes from value sublevel sets, and a brute-force check.

The oracle enumerates every piecewise bang-bang control with at most
``max_switches`` switches on the dt grid and rolls the Euler flow forward
from each start state; a state is reachable if some rollout enters the open
target disk at a step index in ``[0, n_steps)``.  It shares nothing with the
value-iteration code except the integrator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .costs import TravelCost, state_norm
from .dynamics import ControlledDynamics
from .errors import ContractError
from .grid import Grid2, ScalarField


@dataclass(frozen=True)
class BrtMask:
    grid: Grid2
    inside: np.ndarray  # bool, shape (ny, nx)

    def __post_init__(self):
        if self.inside.shape != self.grid.shape:
            raise ContractError("mask shape does not match grid")

    def count(self) -> int:
        return int(self.inside.sum())

    def __eq__(self, other):
        return isinstance(other, BrtMask) and self.grid == other.grid and np.array_equal(self.inside, other.inside)


@dataclass(frozen=True)
class OracleConfig:
    n_steps: int
    dt: float
    max_switches: int = 3
    substeps: int = 1  # >1 refines the integrator for sensitivity checks

    def __post_init__(self):
        if not 0 <= self.max_switches <= 3:
            raise ContractError("oracle switch budget must be in [0, 3]")
        if self.n_steps < 1 or not self.dt > 0 or self.substeps < 1:
            raise ContractError("oracle needs n_steps >= 1, dt > 0 and substeps >= 1")

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt


def extract_brt(value: ScalarField, threshold: float = -1e-6) -> BrtMask:
    """Nodes with value < threshold; the rest stands in for the zero level set."""
    if not threshold < 0:
        raise ContractError(f"strictness threshold must be negative, got {threshold}")
    return BrtMask(value.grid, value.values < threshold)


def control_sequences(n_steps: int, max_switches: int, actions: tuple[float, ...]) -> np.ndarray:
    """All bang-bang sequences over two actions with <= max_switches switches."""
    if len(actions) != 2:
        raise ContractError("oracle enumerates a two-action (bang-bang) control set")
    seqs = []
    for first in (0, 1):
        for s in range(0, min(max_switches, n_steps - 1) + 1):
            for cuts in itertools.combinations(range(1, n_steps), s):
                idx = np.full(n_steps, first)
                for c in cuts:
                    idx[c:] = 1 - idx[c:]
                seqs.append(idx)
    return np.asarray(actions, dtype=float)[np.array(seqs)]


def _reach_any(starts: np.ndarray, seqs: np.ndarray, radius: float, dt: float, substeps: int) -> np.ndarray:
    """For each start (N,2), whether any sequence (M,K) enters the disk before the last step."""
    hit = state_norm(starts) < radius
    h = dt / substeps
    chunk = max(1, 2_000_000 // max(1, starts.shape[0]))
    for m0 in range(0, seqs.shape[0], chunk):
        block = seqs[m0:m0 + chunk]
        x1 = np.broadcast_to(starts[:, 0], (block.shape[0], starts.shape[0])).copy()
        x2 = np.broadcast_to(starts[:, 1], (block.shape[0], starts.shape[0])).copy()
        n_steps = block.shape[1]
        for k in range(n_steps):
            u = block[:, k:k + 1]
            for sub in range(substeps):
                x1, x2 = x1 + h * x2, x2 + h * u
                if k == n_steps - 1 and sub == substeps - 1:
                    break  # capture exactly at the horizon does not count
                inside = np.sqrt(x1 * x1 + x2 * x2) < radius
                hit |= inside.any(axis=0)
    return hit


def oracle_reachable(x0, target: TravelCost, cfg: OracleConfig, dyn: ControlledDynamics) -> bool:
    starts = np.asarray(x0, dtype=float).reshape(1, 2)
    seqs = control_sequences(cfg.n_steps, cfg.max_switches, dyn.controls.actions)
    return bool(_reach_any(starts, seqs, target.radius, cfg.dt, cfg.substeps)[0])


def oracle_mask(grid: Grid2, target: TravelCost, cfg: OracleConfig, dyn: ControlledDynamics) -> BrtMask:
    starts = grid.points().reshape(-1, 2)
    seqs = control_sequences(cfg.n_steps, cfg.max_switches, dyn.controls.actions)
    hit = _reach_any(starts, seqs, target.radius, cfg.dt, cfg.substeps)
    return BrtMask(grid, hit.reshape(grid.shape))


@dataclass(frozen=True)
class MaskComparison:
    agreements: int
    disagreements: int
    out_of_band: int
    band_cells: int
    disagreement_nodes: tuple[tuple[int, int], ...]  # (i, j)
    out_of_band_nodes: tuple[tuple[int, int], ...]


def _frontier(mask: np.ndarray) -> np.ndarray:
    """Nodes with an 8-neighbour of the other label."""
    ny, nx = mask.shape
    pad = np.pad(mask, 1, mode="edge")
    edge = np.zeros_like(mask)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if di or dj:
                edge |= pad[1 + dj:1 + dj + ny, 1 + di:1 + di + nx] != mask
    return edge


def _dilate(mask: np.ndarray, r: int) -> np.ndarray:
    """Chebyshev dilation by r cells."""
    ny, nx = mask.shape
    pad = np.pad(mask, r, mode="constant", constant_values=False)
    out = np.zeros_like(mask)
    for dj in range(-r, r + 1):
        for di in range(-r, r + 1):
            out |= pad[r + dj:r + dj + ny, r + di:r + di + nx]
    return out


def compare_masks(a: BrtMask, b: BrtMask, band_cells: int = 2) -> MaskComparison:
    """Count disagreements, and those farther than ``band_cells`` from a's frontier."""
    if a.grid != b.grid:
        raise ContractError("cannot compare masks on different grids")
    diff = a.inside != b.inside
    band = _dilate(_frontier(a.inside), band_cells)
    oob = diff & ~band
    j, i = np.nonzero(diff)
    jo, io = np.nonzero(oob)
    return MaskComparison(
        agreements=int((~diff).sum()),
        disagreements=int(diff.sum()),
        out_of_band=int(oob.sum()),
        band_cells=band_cells,
        disagreement_nodes=tuple(zip(i.tolist(), j.tolist())),
        out_of_band_nodes=tuple(zip(io.tolist(), jo.tolist())),
    )


def write_pbm(mask: BrtMask, path) -> None:
    """Plain bitmap (P1), 1 = inside, top row is y_max."""
    g = mask.grid
    rows = mask.inside[::-1].astype(int)
    out = ["P1", f"{g.nx} {g.ny}"]
    out.extend(" ".join(str(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(out) + "\n")


def write_disagreements_csv(cmp: MaskComparison, grid: Grid2, path) -> None:
    oob = set(cmp.out_of_band_nodes)
    lines = ["i,j,x1,x2,out_of_band"]
    for i, j in cmp.disagreement_nodes:
        x1, x2 = grid.node(i, j)
        lines.append(f"{i},{j},{x1!r},{x2!r},{int((i, j) in oob)}")
    Path(path).write_text("\n".join(lines) + "\n")
