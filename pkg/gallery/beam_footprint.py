"""Beam footprint and channel gain across the floor.

Shows how the diverging micro-lens widens the VCSEL beam, and maps the
best-AP channel gain over a grid of receiver positions.  Writes an SVG of
beam radius against distance into ``gallery_out/``.
"""
# %%
from pathlib import Path

import numpy as np

from mapcsim.mobility import Room
from mapcsim.netstate import associate, channel_matrix, grid_layout
from mapcsim.optics import BeamParams, ReceiverParams, lensed_beam_radius
from mapcsim.svgplot import line_chart

out = Path("gallery_out")
out.mkdir(exist_ok=True)
beam, recv, room = BeamParams(), ReceiverParams(), Room()

# %%
# Radius of the lensed beam and of the bare VCSEL beam over the room height.
z = np.linspace(0.01, room.z, 60)
lensed = lensed_beam_radius(beam, z)
bare = lensed_beam_radius(BeamParams.identity_lens(), z)
print(f"footprint at {room.z} m: lensed {lensed[-1]:.3f} m, bare {bare[-1]:.4f} m")
line_chart(out / "beam_radius.svg", {"lensed": (z, lensed), "no lens": (z, bare)},
           "distance (m)", "beam radius (m)", "1/e^2 beam radius")

# %%
# Upward-facing receivers on a 0.1 m floor grid; the strongest AP per point.
xs, ys = np.meshgrid(np.arange(0.05, room.x, 0.1), np.arange(0.05, room.y, 0.1))
n = xs.size
states = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n)])
layout = grid_layout(room, 4, 3, beam)
g = channel_matrix(states, layout, beam, recv)
best = g[np.arange(n), associate(g)]
print(f"best-AP gain over the floor: min {best.min():.2e}, median {np.median(best):.2e}, max {best.max():.2e}")
