"""
Simulating responses under an attribute hierarchy
=================================================

A hierarchy restricts which attribute profiles can occur.  This script
builds the four standard four-attribute hierarchies, lists the profiles
each one permits, and simulates DINA responses for one of them.
"""

# %%
import numpy as np

from hiercdm import SimSpec, hierarchy_template, induced_profiles, simulate

for name in ("linear", "convergent", "divergent", "unstructured"):
    h = hierarchy_template(name)
    profiles = induced_profiles(h)
    print(f"{name:13s} edges={[(a + 1, b + 1) for a, b in h.sorted_edges()]}")
    print(f"{'':13s} {len(profiles)} profiles: {' '.join(profiles.bitstrings())}")

# %%
# Items guess with probability 0.1 and slip with probability 0.1, so the
# two levels each item takes are 0.1 and 0.9.
spec = SimSpec.from_noise("dina", hierarchy_template("linear"), 0.1, n_subjects=1000, seed=0)
truth, data = simulate(spec)
print("Q-matrix rows 1-5:\n", truth.q.entries[:5])
print("class sizes:", np.bincount(truth.memberships, minlength=truth.n_classes))

# %%
# Item means rise with the number of classes able to answer the item.
capable = (truth.theta > 0.5).sum(axis=1)
for k in np.unique(capable):
    print(f"items answerable by {k} classes: mean correct {data.values[:, capable == k].mean():.3f}")
