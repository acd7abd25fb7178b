"""
Fitting with missing responses
==============================

Unobserved cells drop out of the likelihood rather than being imputed.
With a full mask the masked fit reproduces the complete-data fit exactly.
"""

# %%
import numpy as np

from hiercdm import EmConfig, ResponseData, SimSpec, fit, fit_missing, hierarchy_template, simulate
from hiercdm import spectral_init
from hiercdm.simulate import apply_missingness, make_rng

spec = SimSpec.from_noise("dina", hierarchy_template("linear"), 0.1, n_subjects=800, seed=4)
truth, data = simulate(spec)
config = EmConfig(m_upper=10, lambda1=0.02, lambda2=0.005, max_outer_iters=100)
init = spectral_init(data, 10, seed=4)

full = fit(data, config, init)
masked = fit_missing(ResponseData(data.values, np.ones_like(data.values)), config, init)
print("full mask identical:", np.array_equal(full.params.item_params, masked.params.item_params))

# %%
holey = apply_missingness(data, 0.2, make_rng(4, 1))
print(f"observed fraction: {holey.observed.mean():.3f}")
res = fit_missing(holey, config, spectral_init(holey, 10, seed=4))
print("classes selected with 20% missing:", res.n_selected, "(truth", truth.n_classes, ")")
