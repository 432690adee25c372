"""Hybrid GM + LSTM predictor against the GM-only baseline.

Trains the correction network on behavioural traces, then compares position
and orientation RMSE over prediction horizons 1 to 10.  Set ``EPOCHS`` to
the configured value for a full-quality run (about ten minutes on one core).
"""
# %%
from pathlib import Path

from mapcsim.config import load_config
from mapcsim.predictor import train
from mapcsim.simharness import experiment_rmse_vs_horizon, predictor_training_traces, write_table_csv
from mapcsim.svgplot import line_chart

EPOCHS = 10
out = Path("gallery_out")
out.mkdir(exist_ok=True)
cfg = load_config()
base = cfg.scenario()

# %%
q = cfg["predictor"]
traces = predictor_training_traces(base, q["train_users"], q["train_steps"], seed=0)
model = train(traces, cfg.lstm_spec(), cfg.train_config("predictor"), seed=0, gm_params=base.gm,
              room=base.room, val_fraction=q["val_fraction"], epochs=EPOCHS)
print(f"final train loss {model.final_loss:.4f}")

# %%
rows = experiment_rmse_vs_horizon(base, model, n_users=30, n_steps=200)
for r in rows:
    print(f"h={r['horizon']:2d}  hybrid {r['position_rmse']:.4f} m  GM {r['gm_position_rmse']:.4f} m")
write_table_csv(out / "rmse_vs_horizon.csv", rows)
h = [r["horizon"] for r in rows]
line_chart(out / "rmse_vs_horizon.svg",
           {"hybrid": (h, [r["position_rmse"] for r in rows]), "GM only": (h, [r["gm_position_rmse"] for r in rows])},
           "horizon", "position_rmse", "Position RMSE against horizon")
