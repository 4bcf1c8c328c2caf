"""Aggregation of group-time effects into a single ATT.

Three weighting schemes are supported:

``simple``
    Every feasible ATT(g, t) gets weight ``1 / #cells``.
``group``
    ATT(g) is the unweighted mean of ATT(g, t) over its feasible t; the
    overall value is the unweighted mean of the ATT(g).
``calendar``
    ATT(t) is the unweighted mean of the feasible ATT(g, t) with g <= t;
    the overall value is the unweighted mean of the ATT(t).

Note that ``simple`` is a plain equal-weight average. Some software uses
cohort-size weights under the same name; those are not implemented.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import EmptyDesignError, InputError
from .estimator import estimate_all_cells

Scheme = Literal["simple", "group", "calendar"]
SCHEMES = ("simple", "group", "calendar")


def scheme_weights(keys, scheme: str = "simple") -> np.ndarray:
    """Weights over ``keys`` (a sequence of (g, t)) for an aggregation scheme."""
    keys = list(keys)
    if not keys:
        raise EmptyDesignError("cannot aggregate an empty set of cells")
    if scheme == "simple":
        return np.full(len(keys), 1.0 / len(keys))
    if scheme == "group":
        by = [g for g, _ in keys]
    elif scheme == "calendar":
        by = [t for _, t in keys]
    else:
        raise InputError(f"unknown aggregation scheme {scheme!r}; expected one of {SCHEMES}")
    counts: dict = defaultdict(int)
    for b in by:
        counts[b] += 1
    return np.array([1.0 / (len(counts) * counts[b]) for b in by])


@dataclass(frozen=True)
class AttResult:
    """An aggregated ATT.

    ``weights`` maps (g, t) to the weight that cell received; ``components``
    holds the per-group (``group``) or per-period (``calendar``) means.
    """

    value: float
    scheme: str
    weights: dict
    cells: list
    control_mode: str
    components: dict = field(default_factory=dict)

    @property
    def keys(self) -> list:
        return [c.key for c in self.cells]

    def weight_vector(self) -> np.ndarray:
        return np.array([self.weights[k] for k in self.keys])


def aggregate_att(cells, scheme: str = "simple") -> AttResult:
    """Weighted average of cell estimates under ``scheme``."""
    cells = list(cells)
    if not cells:
        raise EmptyDesignError("cannot aggregate an empty set of cells")
    keys = [c.key for c in cells]
    w = scheme_weights(keys, scheme)
    values = np.array([c.value for c in cells])
    components: dict = {}
    if scheme in ("group", "calendar"):
        pos = 0 if scheme == "group" else 1
        groups: dict = defaultdict(list)
        for k, v in zip(keys, values):
            groups[k[pos]].append(v)
        components = {b: float(np.mean(v)) for b, v in sorted(groups.items())}
    return AttResult(
        value=float(w @ values),
        scheme=scheme,
        weights=dict(zip(keys, w.tolist())),
        cells=cells,
        control_mode=cells[0].cell.control_mode,
        components=components,
    )


def estimate_att(panel, cohorts, control_mode: str = "never_treated", scheme: str = "simple",
                 *, threads: int | None = None) -> AttResult:
    """Estimate all feasible cells and aggregate them in one call."""
    return aggregate_att(estimate_all_cells(panel, cohorts, control_mode, threads=threads), scheme)
