"""Body-part amplitude sweeps on a trained model.

Expects checkpoints written by the CLI, e.g.::

    partphase synth --out runs/data
    partphase train --stage phase   --preset toy --data runs/data/dataset --out runs/ck
    partphase train --stage bpmoe   --preset toy --data runs/data/dataset --out runs/ck
    partphase train --stage sampler --preset toy --data runs/data/dataset --out runs/ck
    python3 demos/part_modulation.py runs/ck out/

Scales the lower-body phase amplitude of a high-knees rollout and plots the
leg lift; the upper body keeps its own phases.
"""
import os
import sys

import numpy as np
import torch

from partphase.cli import load_pipeline
from partphase.container import build_dataset
from partphase.modulation import measure, plot_curves, sweep, write_curves
from partphase.pae import dataset_phases
from partphase.skeleton import make_partition
from partphase.synth import synthetic_clips

ck, out = sys.argv[1], sys.argv[2] if len(sys.argv) > 2 else "modulation_out"
os.makedirs(out, exist_ok=True)
part = make_partition("two")
paes, bpmoe, sampler = load_pipeline(ck, part)
ds = build_dataset(synthetic_clips(("highknees",), 1, 300, seed=11), "two", augment_mirror=False)
ds.phases = dataset_phases(ds, part, paes)
s = torch.as_tensor(ds.states(), dtype=torch.float32)
p = torch.as_tensor(ds.phases, dtype=torch.float32)
style = sampler.encode_style(p[:1, :30])
res = sweep(bpmoe, sampler, s[:1, 0], s[:1, 40], 40, style, p[:1, 0], parts=[1],
            amp_factors=(0.5, 1.0, 2.5), kind="limb-height")
curves = {k: r["curve"] for k, r in res.items()}
for k, r in res.items():
    hands = measure(r["positions"], "hand-height")
    print(f"{k:>8}: peak leg lift {r['curve'].max():6.1f}, peak hand height {hands.max():6.1f}")
write_curves(os.path.join(out, "leg_lift.csv"), curves)
plot_curves(os.path.join(out, "leg_lift.png"), curves, "limb height")
print("wrote", out)
