# %% [markdown]
# # Group-time effects on a small staggered panel
#
# Three regions adopt at different times: A in period 2, B in period 3 and
# C never. The effect is 1 for A in every treated period and 3 for B.

# %%
import numpy as np

import cohortjack as cj

timing = {"A": 2, "B": 3, "C": 0}
rng = np.random.default_rng(0)
rows = []
for r, g in timing.items():
    for i in range(20):
        for t in (1, 2, 3):
            effect = (1.0 if r == "A" and t >= 2 else 0.0) + (3.0 if r == "B" and t >= 3 else 0.0)
            rows.append((f"{r}{i}", r, t, 0.3 * t + effect + rng.normal(scale=0.2)))
unit, region, period, y = zip(*rows)
panel = cj.PanelData.from_long(unit, region, period, y)
cohorts = cj.assign_cohorts(panel, timing)
panel.n, panel.R, panel.T

# %% [markdown]
# Only three ATT(g, t) cells exist, each compared with C.

# %%
for e in cj.estimate_all_cells(panel, cohorts, "never_treated"):
    print(e.key, round(e.value, 3), sorted(e.cell.comparison))

# %% [markdown]
# With not-yet-treated controls, B also serves as a comparison for A in period 2.

# %%
for c in cj.feasible_cells(cohorts, panel, "not_yet_treated"):
    print(c.key, sorted(c.comparison))

# %% [markdown]
# Aggregation. The simple average weights the three cells equally, so the
# result is near (1 + 1 + 3) / 3. The group and calendar schemes average
# within cohort or period first.

# %%
for scheme in ("simple", "group", "calendar"):
    att = cj.estimate_att(panel, cohorts, "never_treated", scheme)
    print(f"{scheme:9s} {att.value:.3f} {att.components}")

# %% [markdown]
# The two-way fixed-effects coefficient lands elsewhere: its implicit
# weights use A, already treated, as a control for B in period 3.

# %%
cj.twfe_beta(panel, cohorts)

# %% [markdown]
# ## Inference needs more than one region per group
#
# With every group a single region, the cluster totals of the influence
# contributions are identically zero and the clustered standard error
# collapses. Dropping C also leaves no comparison group at all, so the
# cluster jackknife refuses.

# %%
att = cj.estimate_att(panel, cohorts)
psi = cj.influence_contributions(panel, cohorts, att.cells)
try:
    cj.asymptotic_inference(att, psi, panel.unit_region)
except cj.DegenerateVarianceError as exc:
    print(exc)
try:
    cj.cluster_jackknife(panel, cohorts)
except cj.JackknifeAbort as exc:
    print(exc)
