"""Energy efficiency of MAPC and the three baselines.

Runs the user-count and speed sweeps with a briefly trained predictor and
allocator, and writes the tables plus SVG charts to ``gallery_out/``.
Increase the repetitions and training sizes for publication-grade numbers.
"""
# %%
from pathlib import Path

from mapcsim.config import load_config
from mapcsim.powerctl import train_allocator
from mapcsim.predictor import train
from mapcsim.simharness import (Models, build_label_set, experiment_ee_vs_speed, experiment_ee_vs_users,
                                predictor_training_traces, write_table_csv)
from mapcsim.svgplot import table_chart

REPS = 3
out = Path("gallery_out")
out.mkdir(exist_ok=True)
cfg = load_config()
base = cfg.scenario(n_slots=50)

# %%
q, a = cfg["predictor"], cfg["allocator"]
pred = train(predictor_training_traces(base, q["train_users"], q["train_steps"]), cfg.lstm_spec(),
             cfg.train_config("predictor"), gm_params=base.gm, room=base.room, epochs=10)
labels = build_label_set(base, 1500, max_users=a["max_users"], r_min_range=(a["r_min_lo"], a["r_min_hi"]))
cons = base.constraints()
alloc = train_allocator(labels, cons.p_min, cons.p_max, cfg.train_config("allocator"),
                        max_users=a["max_users"], max_aps=base.layout().n_aps)
models = Models(predictor=pred, allocator=alloc)

# %%
users = experiment_ee_vs_users(base, models, repetitions=REPS)
write_table_csv(out / "ee_vs_users.csv", users)
table_chart(out / "ee_vs_users.svg", users, "n_users", "mean_ee", "scheme", "EE against user count")
for r in users:
    print(f"U={r['n_users']:2d} {r['scheme']:6s} EE {r['mean_ee']:.3f}")

# %%
speeds = experiment_ee_vs_speed(base, models, repetitions=REPS)
write_table_csv(out / "ee_vs_speed.csv", speeds)
table_chart(out / "ee_vs_speed.svg", speeds, "speed", "mean_ee", "scheme", "EE against mean speed")
for s in ("MAPC", "CPC", "ConsPC", "RPC"):
    drop = next(r["relative_drop"] for r in speeds if r["scheme"] == s)
    print(f"{s:6s} relative EE drop from slowest to fastest: {drop:.1%}")
