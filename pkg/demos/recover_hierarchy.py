"""
From latent classes to an attribute hierarchy
=============================================

Given the item parameters of the selected classes, each item flags the
classes that answer it best.  Comparing those flags across classes gives
a partial order; the partial order is turned into binary attribute
profiles, from which the hierarchy and the Q-matrix follow.
"""

# %%
import numpy as np

from hiercdm import LcmParams, SimSpec, hierarchy_template, recover, score, simulate
from hiercdm.io import hierarchy_to_dot

truth, _ = simulate(SimSpec("gdina", hierarchy_template("convergent"), n_subjects=5, seed=2))

# Perturb the true parameters slightly, as an estimate would be.
rng = np.random.default_rng(0)
theta = np.clip(truth.theta + rng.uniform(-0.004, 0.004, truth.theta.shape), 0, 1)
params = LcmParams(truth.proportions, theta)

# %%
rec = recover(params, t=0.1)
print("indicator matrix, first 6 items:\n", rec.gamma.entries[:6])
print("profiles:", rec.profiles.bitstrings())
print(hierarchy_to_dot(rec.hierarchy))

# %%
# Recovered attributes carry arbitrary labels; scoring matches them to
# the truth before comparing.
print(score(rec, params, truth, t=0.1))
