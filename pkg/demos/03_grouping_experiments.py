# %% [markdown]
# # Does the selected set predict? Repeated cross-validated C-index
#
# Five feature groupings are compared with a random survival forest under
# repeated stratified K-fold CV. Every grouping sees the same folds, so
# differences are paired. The top-k DBM ranking comes from LOCO-MP on the
# full data, as a frozen list.

# %%
import numpy as np

from survloco import evaluation as ev, locomp, synth
from survloco.dataset import discretize

ds, truth = synth.paper_shaped(seed=0)
dbm = ds.select(ds.names_tagged("dbm"))
grid, _, _ = discretize(dbm)
ranking = locomp.run(dbm, grid, K=1000, seed=0)
model = ev.ModelSpec(n_trees=100)

# %%
groupings = ev.make_groupings(ds, ranking, k=6)
rep = ev.repeated_cv(ds, groupings, model, repeats=3, folds=5, seed=0)
for label, med in rep.medians().items():
    print(f"{label:36s} median C {med:.3f}")

# %% [markdown]
# Sensitivity to how many top DBM features are kept.

# %%
sweep = ev.topk_sweep(ds, ranking, range(1, 9), model, repeats=3, folds=5, seed=0)
for label, med in sweep.medians().items():
    print(f"{label:36s} median C {med:.3f}")

# %% [markdown]
# Drop the dominant conventional covariate and see which groupings hold up.

# %%
keep = [g for g in groupings if "bt25fw" in g.columns]
abl = ev.repeated_cv(ds, [ev.ablate(g, ["bt25fw"]) for g in keep], model, repeats=3, folds=5, seed=0)
for label, med in abl.medians().items():
    print(f"{label:48s} median C {med:.3f}")
