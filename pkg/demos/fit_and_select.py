"""
Selecting the number of latent classes
======================================

The estimator starts from many more latent classes than needed.  One
penalty drives redundant class proportions to zero; another fuses item
parameters of classes that behave alike.  The penalty strengths are
chosen by BIC in two stages.  A reduced grid keeps the run under a minute.
"""

# %%
from hiercdm import (
    EmConfig,
    SimSpec,
    TuningGrid,
    hierarchy_template,
    simulate,
    spectral_init,
    two_stage_search,
)

spec = SimSpec.from_noise("dina", hierarchy_template("divergent"), 0.1, n_subjects=1000, seed=1)
truth, data = simulate(spec)
print("true number of classes:", truth.n_classes)

# %%
config = EmConfig(m_upper=12)
grid = TuningGrid(stage1_lambda1=[0.01, 0.02, 0.04], stage1_lambda2=[0.005, 0.01],
                  stage2_log_lambda2=[0.0, 2.0], stage2_tau=[0.05])
result = two_stage_search(data, grid, config, spectral_init(data, 12, seed=1))

for row in result.table:
    print(f"stage {row['stage']} l1={row['lambda1']:.3f} l2={row['lambda2']:.3f} "
          f"tau={row['tau']:.2f} M={row['m_hat']:2d} BIC={row['bic']:.1f}")
print("selected:", result.hyperparameters, "with", result.fit.n_selected, "classes")
