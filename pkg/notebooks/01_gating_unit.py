"""A walk through the gating unit and the fusion module on tiny tensors.

Run with ``python notebooks/01_gating_unit.py``.  Everything here is float64
and small enough to read the numbers by eye.
"""

import numpy as np

from gffmgan import layers as L
from gffmgan.gffm import GatingUnitParams, GffmParams, gating_unit_parts, gffm_forward

rng = np.random.default_rng(0)

# %% One gating unit: a sigmoid gate blends the input feature with a refinement.
unit = GatingUnitParams.create(2, 3, 2, "demo", rng, dtype=np.float64)
f_i = rng.standard_normal((1, 2, 4, 4))
f_s = rng.standard_normal((1, 3, 4, 4))
parts = gating_unit_parts(f_i, f_s, unit)
print("gate range:", parts.gate.data.min().round(3), "to", parts.gate.data.max().round(3))
print("output shape:", parts.output.shape)

# %% Forcing the gate open passes f_i straight through the output conv.
unit.w_g.weight.data[...] = 0.0
unit.w_g.bias.data[...] = 20.0
opened = gating_unit_parts(f_i, f_s, unit)
direct = L.apply_conv(f_i, unit.w_o).data
print("open gate, max deviation from conv(W_o, f_i):", np.abs(opened.output.data - direct).max())

# %% Closing it hands the output over to the refinement feature.
unit.w_g.bias.data[...] = -20.0
closed = gating_unit_parts(f_i, f_s, unit)
print("closed gate, max deviation from conv(W_o, f_r):",
      np.abs(closed.output.data - L.apply_conv(closed.refinement, unit.w_o).data).max())

# %% The fusion module refines the main feature and updates the auxiliary memory.
fusion = GffmParams.create(4, 6, "fusion", rng, dtype=np.float64)
f_m = rng.standard_normal((2, 4, 8, 8))
f_a = rng.standard_normal((2, 6, 4, 4))  # coarser and wider: aligned inside the module
main, aux = gffm_forward(f_m, f_a, fusion)
print("refined main:", main.shape, " refined auxiliary:", aux.shape)
