import numpy as np
import pytest

from cohortjack import PanelData, assign_cohorts

EX1 = {"A": 2, "B": 3, "C": 0}
EX2 = dict(zip("ABCDEF", (2, 3, 0, 2, 3, 0)))
EX5 = {"A": 2, "B": 3, "C": 4}


def make_panel(gvar, T=3, units=1, rng=None, outcome=None, sizes=None):
    """Balanced panel over the regions of ``gvar``.

    ``outcome(region, unit_index, period)`` fixes outcomes; otherwise they
    are standard normal draws from ``rng`` (or zeros when rng is None).
    ``sizes`` optionally gives units per region.
    """
    unit, region, period, y = [], [], [], []
    for r in gvar:
        m = units if sizes is None else sizes[r]
        for i in range(m):
            for t in range(1, T + 1):
                unit.append(f"{r}-{i}")
                region.append(r)
                period.append(t)
                if outcome is not None:
                    y.append(float(outcome(r, i, t)))
                elif rng is not None:
                    y.append(float(rng.normal()))
                else:
                    y.append(0.0)
    return PanelData.from_long(unit, region, period, y)


def panel_csv(panel, gvar=None):
    lines = ["unit,region,period,outcome" + (",gvar" if gvar else "")]
    for u, r, t, y in panel.observations():
        lines.append(f"{u},{r},{t},{y!r}" + (f",{gvar[r]}" if gvar else ""))
    return "\n".join(lines) + "\n"


def random_design(rng, max_regions=8, max_T=6):
    """Random staggered timing with at least one treated and one untreated region."""
    T = int(rng.integers(3, max_T + 1))
    R = int(rng.integers(3, max_regions + 1))
    regions = [f"r{k}" for k in range(R)]
    g = rng.choice([0] + list(range(2, T + 1)), size=R)
    g[0] = int(rng.integers(2, T + 1))
    g[1] = 0
    return dict(zip(regions, (int(v) for v in g))), T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ex1_random(rng):
    p = make_panel(EX1, T=3, units=4, rng=rng)
    return p, assign_cohorts(p, EX1)


@pytest.fixture
def ex2_random(rng):
    p = make_panel(EX2, T=3, units=3, rng=rng)
    return p, assign_cohorts(p, EX2)
