# %% [markdown]
# # Discrete-time hazards and the survival loss
#
# A prediction is a hazard curve over d time intervals. The loss for one
# patient depends on whether they had the event in interval q or were
# censored there.

# %%
import numpy as np

from survloco import synth
from survloco.dataset import discretize
from survloco.hazard import HazardCurve, ObservedOutcome, nll, survival

h = HazardCurve([0.1, 0.2, 0.3, 0.4])
print("S(q) for q = 0..4:", [round(survival(h, q), 4) for q in range(5)])

# %% [markdown]
# An event in interval 3 costs -log h(3) - log S(2); censoring in interval 3
# costs -log S(3). The event branch is larger when the hazard is low.

# %%
for c in (1, 0):
    print(f"q=3, event={c}: loss {nll(h, ObservedOutcome(3, c)):.4f}")
print("hand check, event:", -np.log(0.3) - np.log(0.9 * 0.8))
print("hand check, censored:", -np.log(0.9 * 0.8 * 0.7))

# %% [markdown]
# Hazards are clipped away from 0 and 1, so even a curve that claims the
# event is impossible gives a finite loss.

# %%
print(nll(HazardCurve([0.0, 0.0, 0.0]), ObservedOutcome(2, 1)))

# %% [markdown]
# Continuous follow-up times map to 16 equal-width intervals on
# [0, max time]. With 77% censoring, events spread over the grid.

# %%
ds, truth = synth.paper_shaped(seed=0)
grid, q, events = discretize(ds, 16)
print("edges:", np.round(grid.boundaries, 1))
print("events per interval:", np.bincount(q[events == 1], minlength=16))
print(f"realized censoring {truth.realized_censoring:.3f}")
