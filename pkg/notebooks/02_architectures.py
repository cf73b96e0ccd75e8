"""Compare the three generator modes at 32 px and trace a scaled-down forward pass.

Run with ``python notebooks/02_architectures.py``.
"""

import numpy as np

from gffmgan.autograd import no_grad
from gffmgan.networks import MODES, PARAM_TARGETS, arch_from_table, build_generator, generator_forward, param_count

# %% Parameter counts next to the published references.
for mode in MODES:
    g_cfg, _ = arch_from_table(32, mode)
    print(f"{mode:>9}: {param_count(build_generator(g_cfg, 0)) / 1e6:.2f}M")
dense_cfg, _ = arch_from_table(32, "biggan", block_type="dense")
print(f"{'dense':>9}: {param_count(build_generator(dense_cfg, 0)) / 1e6:.2f}M")
print("references:", {k: f"{v / 1e6:.2f}M" for k, v in PARAM_TARGETS.items()})

# %% Where the fusion modules sit. The 128 px table leaves one block without a GFFM.
g128, _ = arch_from_table(128, "proposed")
print("128 px blocks:", [(b.channels, "gffm" if b.gffm else "-") for b in g128.blocks])

# %% A narrow copy of the 128 px generator runs in a second or two; the trace shows every stage.
small, _ = arch_from_table(128, "proposed", channel_scale=1 / 16)
gen = build_generator(small, 0)
trace = []
with no_grad():
    images = generator_forward(gen, np.random.default_rng(0).standard_normal((2, 128)).astype(np.float32), trace=trace)
for label, shape in trace:
    print(f"{label:>8} {shape}")
print("pixel range:", float(images.data.min()), float(images.data.max()))
