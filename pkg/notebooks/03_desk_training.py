"""Train the desk-scale preset for a few dozen iterations and watch FID move.

Run with ``python notebooks/03_desk_training.py``.  The full 500-iteration
preset takes a few minutes per seed; ``ITERS`` keeps this demo short.
"""

import tempfile
from pathlib import Path

from gffmgan.config import preset
from gffmgan.data import scan_and_decode
from gffmgan.metrics import PixelStatBackend, evaluate
from gffmgan.networks import build_discriminator, build_generator
from gffmgan.training import TrainState, train_step

ITERS = 40

run = preset("desk-smoke")
g_cfg, d_cfg = run.arch.build_configs()
reals = scan_and_decode(run.data)
state = TrainState.create(run.train, build_generator(g_cfg, 0), build_discriminator(d_cfg, 1), reals)


def fid_now() -> float:
    return evaluate(state.gen, reals, PixelStatBackend(), 256, seed=0).fid


# %% Before training the generator emits near-uniform noise.
print(f"iteration 0: pixel FID {fid_now():.1f}")

# %% Alternate discriminator and generator updates.
for _ in range(ITERS):
    record = train_step(state)
    if state.iteration % 10 == 0:
        print(f"iteration {state.iteration}: loss_d {record['loss_d']:.3f}  loss_g {record['loss_g']:.3f}")
print(f"iteration {state.iteration}: pixel FID {fid_now():.1f}")

# %% The same run from the command line, with CSV logs, checkpoints and sample grids:
out = Path(tempfile.mkdtemp()) / "desk"
print(f"python -m gffmgan train --preset desk-smoke --seed 0 --out {out}")
