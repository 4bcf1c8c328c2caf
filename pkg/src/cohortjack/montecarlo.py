"""Placebo-law Monte Carlo experiments.

Each replication draws a panel (synthetic, or an 8-period window of a
user panel), assigns fictitious treatment to ``J`` early adopters in year
4 and ``L`` late adopters in year 6, estimates the simple-aggregated ATT
and records whether each of the three inference methods rejects
ATT = 0. Since no treatment effect exists, rejection frequencies measure
test size.

Replications are seeded by ``(seed, R, J, L, replication)`` so results do
not depend on the number of worker processes.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .aggregate import aggregate_att
from .errors import ConfigError, InfeasibleError, JackknifeAbort
from .estimator import CellDesign, CellEstimate
from .inference import (DEFAULT_SEED, DegenerateVarianceWarning, asymptotic_inference,
                        cluster_jackknife, multiplier_bootstrap)
from .panel import PanelData, assign_cohorts, demean_by_region, feasible_cells

METHOD_ORDER = ("asymptotic", "multiplier_bootstrap", "jackknife_cv3")
PANEL_TITLES = {
    "asymptotic": "Panel A: Asymptotic (RIF)",
    "multiplier_bootstrap": "Panel B: Multiplier bootstrap",
    "jackknife_cv3": "Panel C: Cluster jackknife (CV3)",
}

# (R, J=L) combinations with a check mark in the design grid.
DESIGN_GRID = (
    [(8, j) for j in (1, 2, 3)]
    + [(16, j) for j in (1, 2, 3, 4)]
    + [(24, j) for j in (1, 2, 3, 4, 6, 8)]
    + [(32, j) for j in (1, 2, 3, 4, 6, 8, 10, 12)]
)


@dataclass(frozen=True)
class DgpConfig:
    """Clustered, serially correlated outcome process with no treatment effect.

    ``Y[i, r, t] = region_r + period_t + u[r, t] + e[i, r, t]`` where
    ``u`` is a stationary AR(1) in t within each region.
    """

    units_per_region_period: int = 10
    region_effect_sd: float = 1.0
    period_effect_sd: float = 0.5
    cluster_shock_sd: float = 0.1
    ar1_rho: float = 0.5
    idiosyncratic_sd: float = 1.0

    def validate(self):
        if self.units_per_region_period < 1:
            raise ConfigError("units_per_region_period must be at least 1")
        for f in ("region_effect_sd", "period_effect_sd", "cluster_shock_sd", "idiosyncratic_sd"):
            if getattr(self, f) < 0:
                raise ConfigError(f"{f} must be non-negative")
        if not 0 <= self.ar1_rho < 1:
            raise ConfigError("ar1_rho must lie in [0, 1)")


def synth_panel(dgp: DgpConfig, R: int, T: int, rng: np.random.Generator) -> PanelData:
    """Draw one balanced panel of R regions and T periods from ``dgp``."""
    m = dgp.units_per_region_period
    region = dgp.region_effect_sd * rng.standard_normal(R)
    period = dgp.period_effect_sd * rng.standard_normal(T)
    rho = dgp.ar1_rho
    innov = dgp.cluster_shock_sd * rng.standard_normal((R, T))
    u = np.empty((R, T))
    u[:, 0] = innov[:, 0] / math.sqrt(1 - rho * rho)
    for t in range(1, T):
        u[:, t] = rho * u[:, t - 1] + innov[:, t]
    eps = dgp.idiosyncratic_sd * rng.standard_normal((R, m, T))
    y = region[:, None, None] + period[None, None, :] + u[:, None, :] + eps
    names = tuple(f"s{r + 1:02d}" for r in range(R))
    return PanelData(
        y.reshape(R * m, T),
        tuple(f"{names[r]}_{i:04d}" for r in range(R) for i in range(m)),
        np.repeat(np.arange(R), m),
        names,
        tuple(range(1, T + 1)),
    )


def placebo_assign(regions, J: int, L: int, early_year: int = 4, late_year: int = 6,
                   rng: np.random.Generator | None = None) -> dict:
    """Fictitious adoption: J regions in ``early_year``, L others in ``late_year``."""
    regions = list(regions)
    if J < 0 or L < 0 or J + L > len(regions) - 1:
        raise ConfigError(
            f"cannot assign J={J} early and L={L} late adopters among {len(regions)} regions "
            "while keeping an untreated region"
        )
    rng = np.random.default_rng() if rng is None else rng
    order = rng.permutation(len(regions))
    gvar = {r: 0 for r in regions}
    for k in order[:J]:
        gvar[regions[k]] = early_year
    for k in order[J:J + L]:
        gvar[regions[k]] = late_year
    return gvar


def subsample_window(panel: PanelData, window_len: int = 8, rng: np.random.Generator | None = None,
                     R: int | None = None) -> PanelData:
    """Random run of ``window_len`` consecutive periods and ``R`` random regions.

    Periods of the result are re-indexed ``1..window_len``.
    """
    if panel.T < window_len:
        raise ConfigError(f"source panel has {panel.T} periods, need at least {window_len}")
    R = panel.R if R is None else R
    if R > panel.R:
        raise ConfigError(f"source panel has {panel.R} regions, need {R}")
    rng = np.random.default_rng() if rng is None else rng
    start = int(rng.integers(1, panel.T - window_len + 2))
    out = panel.select_periods(start, window_len)
    if R < panel.R:
        keep = set(np.array(panel.regions, dtype=object)[rng.choice(panel.R, R, replace=False)])
        out = out.drop_regions([r for r in panel.regions if r not in keep])
    return out


@dataclass
class McConfig:
    """One cell of the experiment grid plus shared settings."""

    R: int = 8
    J: int = 1
    L: int | None = None
    T: int = 8
    early_year: int = 4
    late_year: int = 6
    replications: int = 500
    level: float = 0.05
    bootstrap_B: int = 999
    seed: int = DEFAULT_SEED
    dgp: DgpConfig = field(default_factory=DgpConfig)
    source: PanelData | None = None
    scheme: str = "simple"
    control_mode: str = "never_treated"
    demean: bool = True

    def __post_init__(self):
        if self.L is None:
            self.L = self.J

    def validate(self):
        if self.J < 0 or self.L < 0:
            raise ConfigError("J and L must be non-negative")
        if self.J + self.L >= self.R:
            raise ConfigError(f"J + L = {self.J + self.L} must be below R = {self.R}")
        if self.early_year < 2 or self.late_year <= self.early_year or self.late_year > self.T:
            raise ConfigError("need 2 <= early_year < late_year <= T")
        if not 0 < self.level <= 1:
            raise ConfigError("level must lie in (0, 1]")
        if self.replications < 1:
            raise ConfigError("replications must be positive")
        if self.bootstrap_B < 99:
            raise ConfigError("bootstrap_B must be at least 99")
        if self.source is not None:
            if self.source.T < self.T or self.source.R < self.R:
                raise ConfigError(
                    f"source panel ({self.source.R} regions x {self.source.T} periods) is "
                    f"smaller than R={self.R} x T={self.T}"
                )
        else:
            self.dgp.validate()


def _cell_estimates(design: CellDesign, cells) -> list:
    values = design.values()
    w = design.sizes
    return [
        CellEstimate(c, float(v), int(w[design.treated[k]].sum()), int(w[design.comparison[k]].sum()))
        for k, (c, v) in enumerate(zip(cells, values))
    ]


def run_replication(config: McConfig, rep: int) -> dict:
    """One paired replication: every method sees the same panel and assignment."""
    L = config.L
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(config.R, config.J, L, rep)))
    if config.source is None:
        panel = synth_panel(config.dgp, config.R, config.T, rng)
    else:
        panel = subsample_window(config.source, config.T, rng, config.R)
    gvar = placebo_assign(panel.regions, config.J, L, config.early_year, config.late_year, rng)
    if config.demean:
        panel = demean_by_region(panel)
    boot_seed = int(rng.integers(2**63))

    out = {"rep": rep, "estimate": math.nan, "error": None}
    try:
        cohorts = assign_cohorts(panel, gvar)
        cells = feasible_cells(cohorts, panel, config.control_mode)
    except InfeasibleError as exc:
        out["error"] = str(exc)
        return out
    design = CellDesign(panel, cohorts, cells)
    att = aggregate_att(_cell_estimates(design, cells), config.scheme)
    psi = design.collapsed_influence()
    out["estimate"] = att.value
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateVarianceWarning)
        asym = asymptotic_inference(att, psi, alpha=config.level, allow_degenerate=True)
        boot = multiplier_bootstrap(att, psi, B=config.bootstrap_B, seed=boot_seed,
                                    alpha=config.level, allow_degenerate=True)
        out["asymptotic"] = (asym.rejects(), asym.degenerate)
        out["multiplier_bootstrap"] = (boot.rejects(), boot.degenerate)
        try:
            jk = cluster_jackknife(panel, cohorts, config.control_mode, config.scheme,
                                   alpha=config.level, att=att, allow_degenerate=True)
            out["jackknife_cv3"] = (jk.rejects(), jk.degenerate)
            out["jackknife_dropped"] = len(jk.detail.dropped_cells)
        except JackknifeAbort as exc:
            out["jackknife_cv3"] = None
            out["jackknife_failure"] = str(exc)
    return out


def _run_chunk(args):
    config, reps = args
    return [run_replication(config, r) for r in reps]


@dataclass
class RejectionRow:
    R: int
    J: int
    L: int
    replications: int
    completed: dict
    rejections: dict
    degenerate: dict
    failed: dict
    decisions: dict = field(repr=False)

    def frequency(self, method: str) -> float:
        c = self.completed[method]
        return self.rejections[method] / c if c else math.nan

    def mc_se(self, method: str) -> float:
        p, c = self.frequency(method), self.completed[method]
        return math.sqrt(p * (1 - p) / c) if c else math.nan


@dataclass
class RejectionTable:
    """Rejection frequencies keyed by (R, J)."""

    rows: dict
    level: float

    def __getitem__(self, key) -> RejectionRow:
        return self.rows[key]

    def merge(self, other: "RejectionTable") -> "RejectionTable":
        return RejectionTable({**self.rows, **other.rows}, self.level)

    def to_csv(self) -> str:
        cols = ["R", "J", "L", "method", "replications", "completed", "rejections",
                "frequency", "mc_se", "failed", "degenerate"]
        lines = [",".join(cols)]
        for key in sorted(self.rows):
            row = self.rows[key]
            for m in METHOD_ORDER:
                lines.append(",".join(str(v) for v in (
                    row.R, row.J, row.L, m, row.replications, row.completed[m],
                    row.rejections[m], f"{row.frequency(m):.6f}", f"{row.mc_se(m):.6f}",
                    row.failed[m], row.degenerate[m])))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        Rs = sorted({k[0] for k in self.rows})
        Js = sorted({k[1] for k in self.rows})
        head = [""] + [f"H=R={R}" for R in Rs]
        out = [f"Rejection frequencies at level {self.level:g}"]
        for m in METHOD_ORDER:
            body = []
            for J in Js:
                cells = []
                for R in Rs:
                    row = self.rows.get((R, J))
                    cells.append("" if row is None else f"{row.frequency(m):.4f}")
                body.append([f"J=L={J}"] + cells)
            widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
            fmt = lambda r: "  ".join(  # noqa: E731
                c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
            out += ["", PANEL_TITLES[m], fmt(head), "-" * len(fmt(head))]
            out += [fmt(r) for r in body]
        failures = [(k, r.failed["jackknife_cv3"]) for k, r in sorted(self.rows.items())
                    if r.failed["jackknife_cv3"]]
        if failures:
            out += ["", "Jackknife replications aborted (empty replicate design):"]
            out += [f"  R={R}, J=L={J}: {n}" for (R, J), n in failures]
        return "\n".join(out) + "\n"


def _summarise(config: McConfig, results: list) -> RejectionRow:
    completed, rejections, degenerate, failed, decisions = {}, {}, {}, {}, {}
    for m in METHOD_ORDER:
        got = [r.get(m) for r in results]
        ok = [g for g in got if g is not None]
        completed[m] = len(ok)
        rejections[m] = sum(bool(g[0]) for g in ok)
        degenerate[m] = sum(bool(g[1]) for g in ok)
        failed[m] = len(got) - len(ok)
        decisions[m] = np.array([np.nan if g is None else float(g[0]) for g in got])
    return RejectionRow(config.R, config.J, config.L, len(results), completed, rejections,
                        degenerate, failed, decisions)


def run_experiment(config: McConfig, *, threads: int | None = None) -> RejectionTable:
    """Run all replications of one (R, J, L) design."""
    config.validate()
    reps = list(range(config.replications))
    if threads and threads > 1:
        chunks = [(config, reps[i::threads]) for i in range(threads)]
        with ProcessPoolExecutor(threads) as pool:
            parts = list(pool.map(_run_chunk, chunks))
        results = sorted((r for part in parts for r in part), key=lambda r: r["rep"])
    else:
        results = _run_chunk((config, reps))
    return RejectionTable({(config.R, config.J): _summarise(config, results)}, config.level)


def run_grid(base: McConfig, grid=DESIGN_GRID, *, threads: int | None = None,
             progress=None) -> RejectionTable:
    """Run :func:`run_experiment` for every (R, J) in ``grid`` with L = J."""
    table = RejectionTable({}, base.level)
    for R, J in grid:
        table = table.merge(run_experiment(replace(base, R=R, J=J, L=J), threads=threads))
        if progress is not None:
            progress(R, J)
    return table


_DGP_KEYS = {f.name for f in fields(DgpConfig)}
_CONFIG_KEYS = {f.name for f in fields(McConfig)} - {"dgp", "source"}


def config_from_mapping(values: dict, base: McConfig | None = None) -> McConfig:
    """Build an :class:`McConfig` from flat string key/value pairs.

    DGP parameters may be given bare (``ar1_rho``) or prefixed (``dgp.ar1_rho``).
    """
    base = base or McConfig()
    top, dgp = {}, {}
    for key, raw in values.items():
        name = key.strip()
        name = name[4:] if name.startswith("dgp.") else name
        target = dgp if name in _DGP_KEYS else top if name in _CONFIG_KEYS else None
        if target is None:
            raise ConfigError(f"unknown configuration key {key!r}")
        target[name] = raw
    typed = {}
    for f in fields(McConfig):
        if f.name in top:
            typed[f.name] = _coerce(top[f.name], getattr(base, f.name), f.name)
    dgp_typed = {f.name: _coerce(dgp[f.name], getattr(base.dgp, f.name), f.name)
                 for f in fields(DgpConfig) if f.name in dgp}
    if "J" in typed and "L" not in typed:
        typed["L"] = typed["J"]
    return replace(base, dgp=replace(base.dgp, **dgp_typed), **typed)


def _coerce(raw, like, name):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int) or (like is None and name == "L"):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {name}") from None
    return raw


def load_config(path, base: McConfig | None = None) -> McConfig:
    """Read a flat ``key = value`` file (``#`` comments allowed)."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
    return config_from_mapping(values, base)


def config_summary(config: McConfig) -> dict:
    out = {k: v for k, v in asdict(replace(config, source=None)).items() if k != "source"}
    out["source"] = None if config.source is None else f"{config.source.R}x{config.source.T} panel"
    return out
