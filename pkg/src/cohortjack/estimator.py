"""Group-time ATT estimation for balanced panels without covariates.

Each ATT(g, t) is the difference between the mean long difference
``Y[t] - Y[g-1]`` of cohort ``g`` and that of its comparison regions,
with comparison regions pooled by observation count. ``att_gt_ols`` is
the equivalent 2x2 regression and is kept as an independent check.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError
from .panel import CellSpec, CohortMap, PanelData, feasible_cells


@dataclass(frozen=True)
class CellEstimate:
    cell: CellSpec
    value: float
    n_treated: int
    n_comparison: int

    @property
    def key(self) -> tuple:
        return self.cell.key


def _group_masks(panel: PanelData, cohorts: CohortMap, cell: CellSpec):
    gvar = cohorts.unit_gvar(panel)
    treated = gvar == cell.g
    comp_codes = [panel.region_code(r) for r in cell.comparison if r in panel._region_index]
    comparison = np.isin(panel.unit_region, comp_codes)
    if not treated.any() or not comparison.any():
        raise InfeasibleError(
            f"ATT({cell.g},{cell.t}) is not estimable: "
            f"{'no treated' if not treated.any() else 'no comparison'} observations"
        )
    return treated, comparison


def _long_difference(panel: PanelData, cell: CellSpec) -> np.ndarray:
    return panel.outcomes[:, cell.t - 1] - panel.outcomes[:, cell.base_period - 1]


def att_gt(panel: PanelData, cohorts: CohortMap, cell: CellSpec) -> CellEstimate:
    """Difference in mean long differences between cohort g and its comparison group."""
    treated, comparison = _group_masks(panel, cohorts, cell)
    dy = _long_difference(panel, cell)
    value = dy[treated].mean() - dy[comparison].mean()
    if not np.isfinite(value):
        raise InfeasibleError(f"ATT({cell.g},{cell.t}) is not finite")
    return CellEstimate(cell, float(value), int(treated.sum()), int(comparison.sum()))


def att_gt_ols(panel: PanelData, cohorts: CohortMap, cell: CellSpec) -> float:
    """Interaction coefficient of the 2x2 regression on the cell's subsample.

    Regressors are a constant, a post-period dummy, a treated-cohort dummy
    and their product, over the treated and comparison units in periods
    ``g - 1`` and ``t``.
    """
    treated, comparison = _group_masks(panel, cohorts, cell)
    rows = treated | comparison
    y = np.concatenate([panel.outcomes[rows, cell.base_period - 1],
                        panel.outcomes[rows, cell.t - 1]])
    m = int(rows.sum())
    post = np.repeat([0.0, 1.0], m)
    d = np.tile(treated[rows].astype(float), 2)
    X = np.column_stack([np.ones(2 * m), post, d, post * d])
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < 4:
        raise InfeasibleError(f"singular 2x2 design for ATT({cell.g},{cell.t})")
    return float(beta[3])


def estimate_all_cells(panel: PanelData, cohorts: CohortMap, control_mode: str = "never_treated",
                       *, threads: int | None = None) -> list:
    """Estimate every feasible ATT(g, t), ordered by (g, t)."""
    cells = feasible_cells(cohorts, panel, control_mode)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda c: att_gt(panel, cohorts, c), cells))
    return [att_gt(panel, cohorts, c) for c in cells]


def did_indicator(panel: PanelData, cohorts: CohortMap) -> np.ndarray:
    """(n_units, T) matrix equal to 1 where the unit's region is treated by period t."""
    gvar = cohorts.unit_gvar(panel)
    t = np.arange(1, panel.T + 1)
    return ((gvar[:, None] > 0) & (t[None, :] >= gvar[:, None])).astype(float)


def _two_way_demean(x: np.ndarray, codes: np.ndarray, n_groups: int, tol: float,
                    max_iter: int) -> np.ndarray:
    x = x.copy()
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    for _ in range(max_iter):
        sums = np.zeros(n_groups)
        np.add.at(sums, codes, x.sum(axis=1))
        step_r = sums / (counts * x.shape[1])
        x -= step_r[codes][:, None]
        step_t = x.mean(axis=0)
        x -= step_t[None, :]
        if max(np.abs(step_r).max(), np.abs(step_t).max()) < tol:
            break
    return x


def twfe_beta(panel: PanelData, cohorts: CohortMap, *, tol: float = 1e-12,
              max_iter: int = 10_000) -> float:
    """Two-way fixed-effects coefficient on the treated-and-post indicator.

    Region and period effects are swept out by alternating projections
    until both demeaning steps move less than ``tol``.
    """
    did = did_indicator(panel, cohorts)
    if did.min() == did.max():
        raise InfeasibleError("TWFE design is collinear: the treatment indicator has no variation")
    y_w = _two_way_demean(panel.outcomes, panel.unit_region, panel.R, tol, max_iter)
    d_w = _two_way_demean(did, panel.unit_region, panel.R, tol, max_iter)
    sxx = float(np.sum(d_w * d_w))
    if sxx <= 1e-12 * did.size:
        raise InfeasibleError("TWFE design is collinear with the region and period effects")
    return float(np.sum(d_w * y_w) / sxx)


def influence_contributions(panel: PanelData, cohorts: CohortMap, cells) -> np.ndarray:
    """Per-unit influence contributions, shape (n_units, n_cells).

    For cell (g, t) and unit i with long difference dY_i::

        psi_i = n/N_treat * 1{i treated} * (dY_i - mean_treat)
              - n/N_comp  * 1{i comparison} * (dY_i - mean_comp)

    with ``n`` the number of panel units. Units outside both groups get 0.
    """
    cells = [c.cell if isinstance(c, CellEstimate) else c for c in cells]
    n = panel.n_units
    psi = np.zeros((n, len(cells)))
    for k, cell in enumerate(cells):
        treated, comparison = _group_masks(panel, cohorts, cell)
        dy = _long_difference(panel, cell)
        n_t, n_c = treated.sum(), comparison.sum()
        psi[treated, k] = n / n_t * (dy[treated] - dy[treated].mean())
        psi[comparison, k] -= n / n_c * (dy[comparison] - dy[comparison].mean())
    return psi


class CellDesign:
    """Region-level sufficient statistics for a set of cells.

    Everything the estimator needs reduces to per-region sums of long
    differences, so cell values, per-cluster influence sums and every
    leave-one-region-out re-estimate are available in closed form without
    touching unit-level data again.

    Attributes
    ----------
    keys : list of (g, t)
    sizes : ndarray (R,)
        Units per region.
    treated, comparison : ndarray of bool (C, R)
    sums : ndarray (C, R)
        Per-region sums of ``Y[t] - Y[g-1]``.
    """

    def __init__(self, panel: PanelData, cohorts: CohortMap, cells):
        cells = [c.cell if isinstance(c, CellEstimate) else c for c in cells]
        R = panel.R
        self.regions = panel.regions
        self.n_units = panel.n_units
        self.keys = [c.key for c in cells]
        self.sizes = panel.region_sizes().astype(float)
        region_totals = np.zeros((R, panel.T))
        np.add.at(region_totals, panel.unit_region, panel.outcomes)
        s = np.array([cohorts.s[r] for r in panel.regions])
        self.treated = np.zeros((len(cells), R), dtype=bool)
        self.comparison = np.zeros((len(cells), R), dtype=bool)
        self.sums = np.empty((len(cells), R))
        for k, cell in enumerate(cells):
            self.treated[k] = s == cell.g
            self.comparison[k] = [r in cell.comparison for r in panel.regions]
            self.sums[k] = region_totals[:, cell.t - 1] - region_totals[:, cell.base_period - 1]

    def _group_stats(self):
        w = self.sizes[None, :]
        n_t = (self.treated * w).sum(axis=1)
        n_c = (self.comparison * w).sum(axis=1)
        s_t = (self.treated * self.sums).sum(axis=1)
        s_c = (self.comparison * self.sums).sum(axis=1)
        return n_t, n_c, s_t, s_c

    def values(self) -> np.ndarray:
        n_t, n_c, s_t, s_c = self._group_stats()
        return s_t / n_t - s_c / n_c

    def cluster_influence(self) -> np.ndarray:
        """(R, C) per-region sums of the influence contributions, divided by n."""
        n_t, n_c, s_t, s_c = self._group_stats()
        m_t, m_c = s_t / n_t, s_c / n_c
        dev_t = self.sums - self.sizes[None, :] * m_t[:, None]
        dev_c = self.sums - self.sizes[None, :] * m_c[:, None]
        out = self.treated * dev_t / n_t[:, None] - self.comparison * dev_c / n_c[:, None]
        return out.T

    def collapsed_influence(self) -> np.ndarray:
        """Influence contributions summed within region, shape (R, C).

        Rows are scaled so that treating each row as one observation of a
        sample of size R reproduces the clustered variance of the unit-level
        contributions; they can be passed to the inference functions with
        ``cluster_of=None``.
        """
        return len(self.regions) * self.cluster_influence()

    def leave_one_out(self) -> np.ndarray:
        """(R, C) cell values with region h removed; NaN where the cell dies."""
        n_t, n_c, s_t, s_c = self._group_stats()
        T, C = self.treated.T, self.comparison.T
        sums, sizes = self.sums.T, self.sizes[:, None]
        nt_h = n_t[None, :] - T * sizes
        nc_h = n_c[None, :] - C * sizes
        st_h = s_t[None, :] - T * sums
        sc_h = s_c[None, :] - C * sums
        alive = (nt_h > 0) & (nc_h > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = st_h / nt_h - sc_h / nc_h
        return np.where(alive, vals, np.nan)
