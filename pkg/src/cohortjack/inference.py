"""Standard errors, tests and intervals for an aggregated ATT.

Three procedures, all clustering at the region level:

* :func:`asymptotic_inference` - cluster sums of the influence
  contributions, referred to N(0, 1);
* :func:`multiplier_bootstrap` - perturbs the cluster sums with
  cluster-constant Mammen draws, percentile confidence interval;
* :func:`cluster_jackknife` - re-estimates the ATT with each region left
  out in turn (CV3 variance), referred to t(H - 1).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .aggregate import AttResult, aggregate_att, scheme_weights
from .errors import DegenerateVarianceError, InputError, JackknifeAbort
from .estimator import CellDesign, att_gt, estimate_all_cells
from .panel import CohortMap, PanelData, enumerate_cells

METHODS = ("asymptotic", "multiplier_bootstrap", "jackknife_cv3")
WEIGHT_LAWS = ("mammen", "rademacher")
DEFAULT_SEED = 20240101
_BLOCK = 256

_SQRT5 = math.sqrt(5.0)
MAMMEN_LOW = -(_SQRT5 - 1) / 2
MAMMEN_HIGH = (_SQRT5 + 1) / 2
MAMMEN_P_LOW = (_SQRT5 + 1) / (2 * _SQRT5)


class DegenerateVarianceWarning(RuntimeWarning):
    pass


@dataclass
class JackknifeDetail:
    """Leave-one-cluster-out replicates.

    ``dropped_cells[h]`` lists the (g, t) cells that could not be
    estimated once cluster ``h`` was removed; the remaining cells were
    re-weighted with the same aggregation scheme.
    """

    loo_estimates: dict
    cluster_sizes: dict
    dropped_cells: dict
    H: int
    roles: dict = field(default_factory=dict)


@dataclass
class BootstrapDetail:
    draws: np.ndarray
    B: int
    seed: int
    weight_law: str = "mammen"


@dataclass
class InferenceResult:
    method: str
    estimate: float
    se: float
    statistic: float
    reference: str
    df: int | None
    p_value: float
    ci: tuple
    alpha: float
    degenerate: bool = False
    detail: JackknifeDetail | BootstrapDetail | None = None

    def rejects(self) -> bool:
        """Two-sided rejection of ATT = 0 at ``alpha``.

        The bootstrap rejects when 0 falls outside its percentile interval;
        the other methods compare the p-value with ``alpha``.
        """
        if self.method == "multiplier_bootstrap":
            lo, hi = self.ci
            return not (lo <= 0.0 <= hi)
        return self.p_value < self.alpha

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "estimate": self.estimate,
            "se": self.se,
            "statistic": _finite_or_none(self.statistic),
            "reference": self.reference,
            "df": self.df,
            "p_value": self.p_value,
            "ci": [self.ci[0], self.ci[1]],
            "alpha": self.alpha,
            "degenerate": self.degenerate,
        }
        if isinstance(self.detail, JackknifeDetail):
            d = self.detail
            out["jackknife"] = {
                "H": d.H,
                "clusters": [
                    {
                        "cluster": str(h),
                        "loo_estimate": d.loo_estimates[h],
                        "size": int(d.cluster_sizes[h]),
                        "role": d.roles.get(h),
                        "dropped_cells": [list(c) for c in d.dropped_cells.get(h, [])],
                    }
                    for h in d.loo_estimates
                ],
            }
        elif isinstance(self.detail, BootstrapDetail):
            d = self.detail
            out["bootstrap"] = {"B": d.B, "seed": d.seed, "weight_law": d.weight_law,
                                "draws": d.draws.tolist()}
        return out


def _finite_or_none(x):
    return float(x) if np.isfinite(x) else None


def _finish(method, estimate, se, reference, df, alpha, detail, allow_degenerate, ci=None):
    degenerate = not se > 1e-15 * max(1.0, abs(estimate))
    if degenerate:
        se = 0.0
        statistic = 0.0 if estimate == 0 else math.copysign(math.inf, estimate)
        p_value = 0.0
        ci = (estimate, estimate) if ci is None else ci
    else:
        statistic = estimate / se
        if reference == "student_t":
            p_value = float(2 * stats.t.sf(abs(statistic), df))
            crit = stats.t.ppf(1 - alpha / 2, df)
        else:
            p_value = float(2 * stats.norm.sf(abs(statistic)))
            crit = stats.norm.ppf(1 - alpha / 2)
        if ci is None:
            ci = (estimate - crit * se, estimate + crit * se)
    res = InferenceResult(method, float(estimate), float(se), float(statistic), reference, df,
                          p_value, (float(ci[0]), float(ci[1])), alpha, degenerate, detail)
    if degenerate:
        msg = f"{method}: standard error is zero; p-value set to 0 by convention"
        if not allow_degenerate:
            raise DegenerateVarianceError(msg, res)
        warnings.warn(msg, DegenerateVarianceWarning, stacklevel=3)
    return res


def _check_alpha(alpha):
    if not 0 < alpha <= 1:
        raise InputError(f"alpha must lie in (0, 1], got {alpha}")


def aggregate_influence(att: AttResult, psi: np.ndarray) -> np.ndarray:
    """Combine per-cell influence columns with the aggregation weights."""
    psi = np.asarray(psi, dtype=float)
    if psi.ndim != 2 or psi.shape[1] != len(att.cells):
        raise InputError(f"psi must have one column per cell ({len(att.cells)}), got {psi.shape}")
    return psi @ att.weight_vector()


def _cluster_totals(values: np.ndarray, cluster_of) -> tuple:
    if cluster_of is None:
        return values.copy(), np.arange(len(values))
    cluster_of = np.asarray(cluster_of)
    if cluster_of.shape != values.shape:
        raise InputError("cluster_of must have one entry per influence row")
    labels, codes = np.unique(cluster_of, return_inverse=True)
    return np.bincount(codes, weights=values, minlength=len(labels)), labels


def asymptotic_inference(att: AttResult, psi: np.ndarray, cluster_of=None, alpha: float = 0.05,
                         *, allow_degenerate: bool = False) -> InferenceResult:
    """Cluster-robust influence-function inference with a normal reference.

    The variance is ``sum_h (sum_{i in h} psi_i)^2 / n^2`` where ``psi`` is
    the aggregated influence contribution. With ``cluster_of=None`` every
    row is its own cluster.
    """
    _check_alpha(alpha)
    agg = aggregate_influence(att, psi)
    totals, _ = _cluster_totals(agg, cluster_of)
    n = len(agg)
    se = math.sqrt(float(np.sum(totals ** 2)) / n ** 2)
    return _finish("asymptotic", att.value, se, "standard_normal", None, alpha, None,
                   allow_degenerate)


def mammen_weights(u: np.ndarray) -> np.ndarray:
    """Map uniforms on [0, 1) to the two-point Mammen law (mean 0, variance 1)."""
    return np.where(u < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)


def rademacher_weights(u: np.ndarray) -> np.ndarray:
    return np.where(u < 0.5, -1.0, 1.0)


def cluster_multipliers(seed: int, B: int, H: int, weight_law: str = "mammen",
                        threads: int | None = None) -> np.ndarray:
    """(B, H) matrix of multiplier draws, constant within each cluster.

    Rows are produced in fixed blocks of 256 replicates, each from its own
    stream keyed by ``(seed, block)``, so the matrix does not depend on how
    many workers fill it.
    """
    if weight_law not in WEIGHT_LAWS:
        raise InputError(f"unknown weight law {weight_law!r}; expected one of {WEIGHT_LAWS}")
    law = mammen_weights if weight_law == "mammen" else rademacher_weights

    def block(b):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        rows = min(_BLOCK, B - b * _BLOCK)
        return law(rng.random((rows, H)))

    n_blocks = -(-B // _BLOCK)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(block, range(n_blocks)))
    else:
        parts = [block(b) for b in range(n_blocks)]
    return np.vstack(parts) if parts else np.empty((0, H))


def multiplier_bootstrap(att: AttResult, psi: np.ndarray, cluster_of=None, B: int = 999,
                         seed: int = DEFAULT_SEED, alpha: float = 0.05, *,
                         weight_law: str = "mammen", threads: int | None = None,
                         allow_degenerate: bool = False) -> InferenceResult:
    """Multiplier bootstrap with cluster-constant draws.

    Each draw is ``ATT + (1/n) sum_h V_bh * sum_{i in h} psi_i``; no
    re-estimation takes place. The standard error is the sample standard
    deviation of the draws and the interval uses their ``alpha/2`` and
    ``1 - alpha/2`` quantiles.
    """
    _check_alpha(alpha)
    if B < 99:
        raise InputError(f"B must be at least 99, got {B}")
    agg = aggregate_influence(att, psi)
    totals, _ = _cluster_totals(agg, cluster_of)
    V = cluster_multipliers(seed, B, len(totals), weight_law, threads)
    draws = att.value + V @ (totals / len(agg))
    se = float(np.std(draws, ddof=1))
    lo, hi = np.quantile(draws, [alpha / 2, 1 - alpha / 2])
    detail = BootstrapDetail(draws, B, seed, weight_law)
    return _finish("multiplier_bootstrap", att.value, se, "standard_normal", None, alpha, detail,
                   allow_degenerate, ci=(lo, hi))


def cv3(estimate: float, loo_estimates) -> float:
    """Cluster-jackknife variance ``(H-1)/H * sum_h (ATT^(h) - ATT)^2``."""
    loo = np.asarray(list(loo_estimates), dtype=float)
    H = loo.size
    if H < 2:
        raise InputError("the cluster jackknife needs at least two clusters")
    return float((H - 1) / H * np.sum((loo - estimate) ** 2))


def _replicates_closed_form(panel, cohorts, att):
    design = CellDesign(panel, cohorts, att.cells)
    loo = design.leave_one_out()
    out = []
    for h, region in enumerate(panel.regions):
        alive = ~np.isnan(loo[h])
        keys = [k for k, a in zip(design.keys, alive) if a]
        dropped = [k for k, a in zip(design.keys, alive) if not a]
        if not keys:
            out.append((region, None, dropped))
            continue
        w = scheme_weights(keys, att.scheme)
        out.append((region, float(w @ loo[h][alive]), dropped))
    return out


def _replicates_refit(panel, cohorts, att, threads):
    full_keys = att.keys
    mode = att.control_mode

    def one(region):
        sub = panel.drop_regions([region])
        coh = cohorts.without([region])
        cells = enumerate_cells(coh, sub, mode).cells
        kept = {c.key for c in cells}
        dropped = [k for k in full_keys if k not in kept]
        if not cells:
            return region, None, dropped
        est = aggregate_att([att_gt(sub, coh, c) for c in cells], att.scheme)
        return region, est.value, dropped

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, panel.regions))
    return [one(r) for r in panel.regions]


def jackknife_replicates(panel: PanelData, cohorts: CohortMap, att: AttResult, *,
                         strict: bool = False, engine: str = "closed_form",
                         threads: int | None = None) -> JackknifeDetail:
    """Leave-one-region-out re-estimates of ``att``.

    ``engine="refit"`` literally rebuilds cohorts, cells and estimates on
    each reduced panel; ``engine="closed_form"`` downdates region-level
    sums and gives the same numbers far faster.

    Raises
    ------
    JackknifeAbort
        When some replicate has no estimable cell, or (``strict=True``)
        when any replicate loses cells.
    """
    if panel.R < 2:
        raise InputError("the cluster jackknife needs at least two clusters")
    if engine == "closed_form":
        reps = _replicates_closed_form(panel, cohorts, att)
    elif engine == "refit":
        reps = _replicates_refit(panel, cohorts, att, threads)
    else:
        raise InputError(f"unknown jackknife engine {engine!r}")

    dropped = {h: d for h, _, d in reps if d}
    empty = [h for h, v, _ in reps if v is None]
    if empty:
        names = ", ".join(repr(h) for h in empty)
        raise JackknifeAbort(
            f"no ATT(g,t) can be estimated when cluster {names} is dropped; the cluster "
            "jackknife is not available for this design (each cohort and the comparison "
            "group need at least two regions, or a different control group)",
            clusters=empty, dropped_cells=dropped,
        )
    if strict and dropped:
        listing = "; ".join(f"{h!r}: {', '.join(f'ATT{k}' for k in d)}" for h, d in dropped.items())
        raise JackknifeAbort(f"strict mode: replicates lose cells ({listing})",
                             clusters=list(dropped), dropped_cells=dropped)
    sizes = panel.region_sizes() * panel.T
    return JackknifeDetail(
        loo_estimates={h: v for h, v, _ in reps},
        cluster_sizes=dict(zip(panel.regions, sizes.tolist())),
        dropped_cells=dropped,
        H=panel.R,
        roles={r: ("treated" if cohorts.s[r] else "control") for r in panel.regions},
    )


def cluster_jackknife(panel: PanelData, cohorts: CohortMap, control_mode: str = "never_treated",
                      scheme: str = "simple", alpha: float = 0.05, strict: bool = False, *,
                      engine: str = "closed_form", threads: int | None = None,
                      att: AttResult | None = None,
                      allow_degenerate: bool = False) -> InferenceResult:
    """Cluster-jackknife (CV3) inference with regions as clusters.

    The variance is centred at the full-sample estimate and the t-statistic
    is referred to t(H - 1).
    """
    _check_alpha(alpha)
    if att is None:
        att = aggregate_att(estimate_all_cells(panel, cohorts, control_mode), scheme)
    detail = jackknife_replicates(panel, cohorts, att, strict=strict, engine=engine,
                                  threads=threads)
    se = math.sqrt(cv3(att.value, detail.loo_estimates.values()))
    return _finish("jackknife_cv3", att.value, se, "student_t", detail.H - 1, alpha, detail,
                   allow_degenerate)


@dataclass
class LooProfile:
    """Leave-one-cluster-out diagnostic table.

    A cluster is flagged when dropping it flips the sign of the estimate or
    moves it by more than ``k`` times the jackknife standard error computed
    from the *other* clusters' shifts.
    """

    estimate: float
    detail: JackknifeDetail
    k: float
    rows: list

    @property
    def flagged(self) -> list:
        return [r["cluster"] for r in self.rows if r["flagged"]]

    def to_csv(self) -> str:
        cols = ["cluster", "size", "role", "loo_estimate", "shift", "scale", "flagged", "reason"]
        lines = [",".join(cols)]
        for r in self.rows:
            lines.append(",".join(_csv_field(r[c]) for c in cols))
        return "\n".join(lines) + "\n"


def _csv_field(v):
    if isinstance(v, float):
        return repr(v)
    s = str(v)
    return f'"{s}"' if ("," in s or '"' in s) else s


def loo_profile(panel: PanelData, cohorts: CohortMap, control_mode: str = "never_treated",
                scheme: str = "simple", *, k: float = 3.0, engine: str = "closed_form",
                att: AttResult | None = None) -> LooProfile:
    """Per-cluster leave-one-out estimates with outlier flags."""
    if att is None:
        att = aggregate_att(estimate_all_cells(panel, cohorts, control_mode), scheme)
    detail = jackknife_replicates(panel, cohorts, att, engine=engine)
    H = detail.H
    shifts = np.array([v - att.value for v in detail.loo_estimates.values()])
    total = float(np.sum(shifts ** 2))
    rows = []
    for (h, v), d in zip(detail.loo_estimates.items(), shifts):
        scale = math.sqrt(max(total - d * d, 0.0) * (H - 1) / H)
        reasons = []
        if att.value != 0 and v != 0 and math.copysign(1, v) != math.copysign(1, att.value):
            reasons.append("sign change")
        if abs(d) > k * scale:
            reasons.append(f"shift > {k:g} se")
        rows.append({
            "cluster": h,
            "size": int(detail.cluster_sizes[h]),
            "role": detail.roles[h],
            "loo_estimate": float(v),
            "shift": float(d),
            "scale": scale,
            "flagged": bool(reasons),
            "reason": "; ".join(reasons),
        })
    return LooProfile(att.value, detail, k, rows)


_METHOD_LABELS = {
    "asymptotic": "CSDID asymptotic",
    "multiplier_bootstrap": "Multiplier bootstrap",
    "jackknife_cv3": "Cluster jackknife (CV3)",
}


def format_table(results, digits: int = 4) -> str:
    """Plain-text table with columns ATT, Std. error, P value, CI lower, CI upper."""
    results = list(results)
    level = int(round(100 * (1 - results[0].alpha))) if results else 95
    head = ["Method", "ATT", "Std. error", "P value", f"{level}% CI lower", f"{level}% CI upper"]
    body = [
        [_METHOD_LABELS.get(r.method, r.method)]
        + [f"{x:.{digits}f}" for x in (r.estimate, r.se, r.p_value, r.ci[0], r.ci[1])]
        for r in results
    ]
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    fmt = lambda row: "  ".join(  # noqa: E731
        c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))
    )
    rule = "-" * len(fmt(head))
    lines = [fmt(head), rule] + [fmt(r) for r in body]
    lines += ["  (degenerate: se = 0)" for r in results if r.degenerate][:1]
    return "\n".join(lines)
