"""Balanced panels, treatment-timing cohorts and group-time cell enumeration.

A :class:`PanelData` stores the outcomes of a balanced panel as a dense
``(n_units, T)`` matrix together with the region each unit belongs to.
Periods are always normalised to ``1..T``; the raw labels are kept on
``period_labels`` for reporting.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterator, Literal, Mapping

import numpy as np
import pandas as pd

from .errors import EmptyDesignError, PanelError

ControlMode = Literal["never_treated", "not_yet_treated"]

CONTROL_MODES = ("never_treated", "not_yet_treated")
_CONTROL_ALIASES = {
    "never": "never_treated",
    "nt": "never_treated",
    "never_treated": "never_treated",
    "notyet": "not_yet_treated",
    "ny": "not_yet_treated",
    "not_yet_treated": "not_yet_treated",
}

DEFAULT_SCHEMA = {"unit": "unit", "region": "region", "period": "period", "outcome": "outcome"}


def normalize_control_mode(mode: str) -> ControlMode:
    try:
        return _CONTROL_ALIASES[str(mode).lower()]
    except KeyError:
        raise PanelError(
            f"unknown control mode {mode!r}; expected one of {sorted(_CONTROL_ALIASES)}"
        ) from None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelData:
    """A balanced unit-by-period panel.

    Parameters
    ----------
    outcomes : ndarray, shape (n_units, T)
        ``outcomes[i, t - 1]`` is the outcome of unit ``i`` in period ``t``.
    unit_ids : tuple
        Opaque unit tokens, one per row of ``outcomes``.
    unit_region : ndarray of int, shape (n_units,)
        Index into ``regions`` for every unit.
    regions : tuple
        Ordered distinct region tokens.
    period_labels : tuple of int
        Raw time labels of periods ``1..T``.
    gvar : dict, optional
        Region -> first-treatment period (raw label, 0 = never), when the
        source carried a gvar column.
    """

    outcomes: np.ndarray
    unit_ids: tuple
    unit_region: np.ndarray
    regions: tuple
    period_labels: tuple
    gvar: Mapping | None = None
    _region_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float)
        if y.ndim != 2:
            raise PanelError("outcomes must be a (units, periods) matrix")
        codes = np.asarray(self.unit_region, dtype=np.intp)
        if codes.shape != (y.shape[0],) or len(self.unit_ids) != y.shape[0]:
            raise PanelError("unit_ids / unit_region do not match the outcome matrix")
        if len(self.period_labels) != y.shape[1]:
            raise PanelError("period_labels must have one label per column")
        if len(set(self.unit_ids)) != len(self.unit_ids):
            raise PanelError("duplicate unit ids")
        if len(set(self.regions)) != len(self.regions):
            raise PanelError("duplicate region ids")
        if codes.size and (codes.min() < 0 or codes.max() >= len(self.regions)):
            raise PanelError("unit_region code out of range")
        object.__setattr__(self, "outcomes", _frozen(y))
        object.__setattr__(self, "unit_region", _frozen(codes))
        object.__setattr__(self, "unit_ids", tuple(self.unit_ids))
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "period_labels", tuple(int(p) for p in self.period_labels))
        object.__setattr__(self, "_region_index", {r: k for k, r in enumerate(self.regions)})

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def T(self) -> int:
        return self.outcomes.shape[1]

    @property
    def R(self) -> int:
        return len(self.regions)

    @property
    def n(self) -> int:
        """Total observation count (units x periods)."""
        return self.outcomes.size

    @property
    def periods(self) -> tuple:
        return tuple(range(1, self.T + 1))

    def region_code(self, region) -> int:
        try:
            return self._region_index[region]
        except KeyError:
            raise PanelError(f"unknown region {region!r}") from None

    def region_sizes(self) -> np.ndarray:
        """Units per region, aligned with ``regions``."""
        return np.bincount(self.unit_region, minlength=self.R)

    def period_index(self, label) -> int:
        """Normalised 1-based index of a raw period label."""
        try:
            return self.period_labels.index(int(label)) + 1
        except ValueError:
            raise PanelError(f"period {label!r} is not in the panel") from None

    def observations(self) -> Iterator[tuple]:
        """Yield ``(unit_id, region_id, period, outcome)`` in unit-major order."""
        for i, uid in enumerate(self.unit_ids):
            reg = self.regions[self.unit_region[i]]
            for t in range(self.T):
                yield uid, reg, t + 1, float(self.outcomes[i, t])

    def to_frame(self, labels: bool = False) -> pd.DataFrame:
        periods = np.array(self.period_labels if labels else self.periods)
        return pd.DataFrame(
            {
                "unit": np.repeat(np.array(self.unit_ids, dtype=object), self.T),
                "region": np.repeat(np.array(self.regions, dtype=object)[self.unit_region], self.T),
                "period": np.tile(periods, self.n_units),
                "outcome": self.outcomes.ravel(),
            }
        )

    def with_outcomes(self, outcomes: np.ndarray) -> "PanelData":
        return PanelData(outcomes, self.unit_ids, self.unit_region, self.regions,
                         self.period_labels, self.gvar)

    def drop_regions(self, drop) -> "PanelData":
        """Return the panel without the given regions (codes are re-packed)."""
        drop = set(drop)
        keep_regions = tuple(r for r in self.regions if r not in drop)
        if not keep_regions:
            raise PanelError("cannot drop every region")
        old_to_new = np.full(self.R, -1, dtype=np.intp)
        for new, r in enumerate(keep_regions):
            old_to_new[self._region_index[r]] = new
        rows = old_to_new[self.unit_region] >= 0
        gvar = None if self.gvar is None else {r: v for r, v in self.gvar.items() if r not in drop}
        return PanelData(
            self.outcomes[rows],
            tuple(u for u, k in zip(self.unit_ids, rows) if k),
            old_to_new[self.unit_region[rows]],
            keep_regions,
            self.period_labels,
            gvar,
        )

    def select_periods(self, start: int, length: int) -> "PanelData":
        """Window of ``length`` consecutive periods starting at normalised ``start``.

        The window is re-labelled ``1..length``.
        """
        if start < 1 or start + length - 1 > self.T:
            raise PanelError("period window outside the panel")
        return PanelData(
            self.outcomes[:, start - 1:start - 1 + length],
            self.unit_ids,
            self.unit_region,
            self.regions,
            tuple(range(1, length + 1)),
        )

    @classmethod
    def from_long(cls, unit, region, period, outcome, *, allow_gaps: bool = False,
                  gvar: Mapping | None = None) -> "PanelData":
        """Build a panel from parallel long-format columns, validating balance."""
        df = pd.DataFrame({"unit": list(unit), "region": list(region),
                           "period": list(period), "outcome": list(outcome)})
        return _panel_from_frame(df, allow_gaps=allow_gaps, gvar=gvar)


def _panel_from_frame(df: pd.DataFrame, *, allow_gaps: bool, gvar=None) -> PanelData:
    if df.empty:
        raise PanelError("panel has no observations")
    dup = df.duplicated(["unit", "period"], keep=False)
    if dup.any():
        row = df[dup].iloc[0]
        raise PanelError(f"duplicate observation for unit {row['unit']!r} in period {row['period']}")

    n_regions_per_unit = df.groupby("unit", sort=True)["region"].nunique()
    multi = n_regions_per_unit[n_regions_per_unit > 1]
    if len(multi):
        raise PanelError(f"unit {multi.index[0]!r} appears in more than one region")

    labels = np.sort(df["period"].unique())
    if len(labels) > 1 and np.any(np.diff(labels) != 1) and not allow_gaps:
        raise PanelError(
            f"period labels are not consecutive integers ({labels.tolist()}); "
            "pass allow_gaps=True to map them order-preservingly"
        )

    counts = df.groupby("unit", sort=True)["period"].nunique()
    short = counts[counts < len(labels)]
    if len(short):
        unit = short.index[0]
        seen = set(df.loc[df["unit"] == unit, "period"])
        missing = [int(p) for p in labels if p not in seen]
        raise PanelError(f"unbalanced panel: unit {unit!r} is missing periods {missing}")

    wide = df.pivot(index="unit", columns="period", values="outcome").sort_index()
    wide = wide[labels]
    unit_reg = df.drop_duplicates("unit").set_index("unit")["region"].loc[wide.index]
    regions = tuple(sorted(unit_reg.unique(), key=lambda r: (str(type(r)), r)))
    code = {r: k for k, r in enumerate(regions)}
    return PanelData(
        wide.to_numpy(dtype=float),
        tuple(wide.index),
        np.array([code[r] for r in unit_reg], dtype=np.intp),
        regions,
        tuple(int(p) for p in labels),
        gvar,
    )


def _read_csv(source) -> pd.DataFrame:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, (str, os.PathLike)) and not os.path.exists(source):
        raise PanelError(f"no such file: {source}")
    try:
        return pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise PanelError("input is empty: expected a CSV header row") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise PanelError(f"could not parse CSV: {exc}") from None


def _to_int(col: pd.Series, what: str) -> pd.Series:
    try:
        vals = pd.to_numeric(col.str.strip(), errors="raise")
    except (ValueError, TypeError):
        bad = col[pd.to_numeric(col.str.strip(), errors="coerce").isna()].iloc[0]
        raise PanelError(f"non-integer {what} value {bad!r}") from None
    if not np.all(np.asarray(vals) == np.round(np.asarray(vals, dtype=float))):
        raise PanelError(f"{what} values must be integers")
    return vals.astype(np.int64)


def load_panel(source, schema: Mapping[str, str] | None = None, *,
               allow_gaps: bool = False) -> PanelData:
    """Read a long-format CSV into a validated :class:`PanelData`.

    Parameters
    ----------
    source : path, bytes or file-like
        UTF-8 CSV with a header row. Rows may come in any order.
    schema : mapping, optional
        Maps the roles ``unit``, ``region``, ``period``, ``outcome`` (and
        optionally ``gvar``) to column names. Missing roles fall back to
        the role name itself.
    allow_gaps : bool
        Accept non-consecutive period labels and map them order-preservingly
        onto ``1..T``.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    raw = _read_csv(source)
    missing = [f"{role}={col!r}" for role, col in schema.items() if col not in raw.columns]
    if missing:
        raise PanelError(f"missing column(s): {', '.join(missing)}; found {list(raw.columns)}")
    if raw.empty:
        raise PanelError("panel has no observations")

    outcome = pd.to_numeric(raw[schema["outcome"]].str.strip(), errors="coerce")
    if outcome.isna().any():
        bad = raw[schema["outcome"]][outcome.isna()].iloc[0]
        raise PanelError(f"non-numeric outcome value {bad!r}")
    df = pd.DataFrame({
        "unit": raw[schema["unit"]],
        "region": raw[schema["region"]],
        "period": _to_int(raw[schema["period"]], "period"),
        "outcome": outcome.astype(float),
    })

    gvar = None
    if "gvar" in schema:
        g = _to_int(raw[schema["gvar"]], "gvar")
        per_region = pd.DataFrame({"region": df["region"], "g": g}).groupby("region")["g"]
        varying = per_region.nunique()
        if (varying > 1).any():
            raise PanelError(f"gvar is not constant within region {varying[varying > 1].index[0]!r}")
        gvar = {r: int(v) for r, v in per_region.first().items()}
    return _panel_from_frame(df, allow_gaps=allow_gaps, gvar=gvar)


def load_gvar(source, region_col: str = "region", gvar_col: str = "gvar") -> dict:
    """Read a two-column region -> first-treatment-period CSV."""
    raw = _read_csv(source)
    for col in (region_col, gvar_col):
        if col not in raw.columns:
            raise PanelError(f"missing column {col!r} in gvar file; found {list(raw.columns)}")
    regions = raw[region_col]
    if regions.duplicated().any():
        raise PanelError(f"region {regions[regions.duplicated()].iloc[0]!r} listed twice in gvar file")
    return dict(zip(regions, (int(v) for v in _to_int(raw[gvar_col], "gvar"))))


@dataclass(frozen=True)
class CohortMap:
    """Treatment timing by region, in normalised period indices.

    ``s[r]`` is the first treated period of region ``r`` (0 if never
    treated), ``cohorts[g]`` the regions first treated in ``g`` and
    ``never_treated`` the never-treated regions.
    """

    s: Mapping
    cohorts: Mapping
    never_treated: frozenset
    treated_cohort_set: tuple

    def unit_gvar(self, panel: PanelData) -> np.ndarray:
        """First-treatment period of every unit's region (0 = never)."""
        by_code = np.array([self.s[r] for r in panel.regions], dtype=np.int64)
        return by_code[panel.unit_region]

    def without(self, regions) -> "CohortMap":
        drop = set(regions)
        return _build_cohort_map({r: g for r, g in self.s.items() if r not in drop})


def _build_cohort_map(s: dict) -> CohortMap:
    cohorts: dict = {}
    for r, g in s.items():
        if g:
            cohorts.setdefault(g, set()).add(r)
    return CohortMap(
        s=dict(s),
        cohorts={g: frozenset(cohorts[g]) for g in sorted(cohorts)},
        never_treated=frozenset(r for r, g in s.items() if g == 0),
        treated_cohort_set=tuple(sorted(cohorts)),
    )


def assign_cohorts(panel: PanelData, gvar: Mapping | None = None) -> CohortMap:
    """Group regions into cohorts by first-treatment period.

    ``gvar`` maps every region to 0 (never treated) or a raw period label
    later than the first period. Defaults to the gvar read with the panel.
    """
    if gvar is None:
        gvar = panel.gvar
    if gvar is None:
        raise PanelError("no gvar supplied and the panel carries none")
    missing = [r for r in panel.regions if r not in gvar]
    if missing:
        raise PanelError(f"gvar is missing region(s) {missing}")
    first = panel.period_labels[0]
    s = {}
    for r in panel.regions:
        g = int(gvar[r])
        if g == 0:
            s[r] = 0
            continue
        if g == first:
            raise PanelError(
                f"region {r!r} is treated in the first period {g}; no pre-treatment period exists"
            )
        if g not in panel.period_labels:
            raise PanelError(
                f"gvar value {g} for region {r!r} is outside the panel's periods "
                f"{panel.period_labels[0]}..{panel.period_labels[-1]}"
            )
        s[r] = panel.period_index(g)
    return _build_cohort_map(s)


@dataclass(frozen=True)
class CellSpec:
    """One estimable ATT(g, t) with its comparison regions."""

    g: int
    t: int
    base_period: int
    control_mode: str
    comparison: frozenset

    @property
    def key(self) -> tuple:
        return (self.g, self.t)


@dataclass(frozen=True)
class CellEnumeration:
    cells: list
    omitted: list  # (g, t, reason)


def _comparison(cohorts: CohortMap, t: int, mode: str) -> frozenset:
    if mode == "never_treated":
        return cohorts.never_treated
    return cohorts.never_treated | frozenset(r for r, g in cohorts.s.items() if g > t)


def enumerate_cells(cohorts: CohortMap, panel: PanelData, control_mode: str = "never_treated"
                    ) -> CellEnumeration:
    """All (g, t) with g <= t <= T, split into estimable and omitted cells."""
    mode = normalize_control_mode(control_mode)
    sizes = panel.region_sizes()
    has_units = {r for r, k in zip(panel.regions, sizes) if k > 0}
    cells, omitted = [], []
    for g in cohorts.treated_cohort_set:
        treated = cohorts.cohorts[g] & has_units
        for t in range(g, panel.T + 1):
            comp = _comparison(cohorts, t, mode) & has_units
            if not treated:
                omitted.append((g, t, "no treated observations"))
            elif not comp:
                omitted.append((g, t, f"empty {mode.replace('_', '-')} comparison group"))
            else:
                cells.append(CellSpec(g, t, g - 1, mode, comp))
    return CellEnumeration(cells, omitted)


def feasible_cells(cohorts: CohortMap, panel: PanelData, control_mode: str = "never_treated"
                   ) -> list:
    """Estimable group-time cells ordered by (g, t).

    Raises
    ------
    EmptyDesignError
        If no cell is estimable.
    """
    found = enumerate_cells(cohorts, panel, control_mode)
    if not found.cells:
        if not cohorts.treated_cohort_set:
            raise EmptyDesignError("no treated cohorts: every region is never treated")
        mode = normalize_control_mode(control_mode)
        hint = ("; no never-treated regions exist, try not_yet_treated"
                if mode == "never_treated" and not cohorts.never_treated else "")
        raise EmptyDesignError(f"no estimable ATT(g,t) cells under {mode}{hint}")
    return found.cells


def demean_by_region(panel: PanelData) -> PanelData:
    """Subtract each region's mean outcome over all its observations."""
    y = panel.outcomes
    sums = np.zeros(panel.R)
    np.add.at(sums, panel.unit_region, y.sum(axis=1))
    counts = panel.region_sizes() * panel.T
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return panel.with_outcomes(y - means[panel.unit_region][:, None])
