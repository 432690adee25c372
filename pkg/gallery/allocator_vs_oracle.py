"""CNN power allocator against the exhaustive lattice oracle.

Labels random scenarios with the oracle, fits the CNN, and reports the
per-instance EE ratio on held-out scenarios.  Smaller than the acceptance
recipe so that it finishes in a few minutes.
"""
# %%
import numpy as np

from mapcsim.config import load_config
from mapcsim.netstate import achievable_rates
from mapcsim.powerctl import PowerConstraints, allocate, energy_efficiency, train_allocator
from mapcsim.simharness import build_label_set, scenario_p_max

N_TRAIN, EPOCHS = 1500, 30
cfg = load_config()
base = cfg.scenario()
a = cfg["allocator"]
r_range = (a["r_min_lo"], a["r_min_hi"])

# %%
labels = build_label_set(base, N_TRAIN, seed=0, max_users=a["max_users"], r_min_range=r_range)
cons = base.constraints()
model = train_allocator(labels, cons.p_min, cons.p_max, cfg.train_config("allocator"), seed=0,
                        max_users=a["max_users"], max_aps=base.layout().n_aps, epochs=EPOCHS)

# %%
held = build_label_set(base, 100, seed=99, max_users=a["max_users"], r_min_range=r_range)
ratios = []
for g, assoc, r, b, p_or in zip(held["gains"], held["assoc"], held["r_min"], held["budgets"], held["powers"]):
    c = PowerConstraints(r, base.p_min, scenario_p_max(base, b), b)
    p_al = allocate(model, g, assoc, c, base.noise).p
    ee = [energy_efficiency(achievable_rates(p, g, assoc, base.noise), p, rate_floor=1.0) for p in (p_or, p_al)]
    ratios.append(ee[1] / ee[0])
ratios = np.array(ratios)
print(f"EE ratio: mean {ratios.mean():.3f}, median {np.median(ratios):.3f}, share >= 0.9 {np.mean(ratios >= 0.9):.2f}")
