"""Train the three stages on a small synthetic set and in-between one transition.

The synthetic clips carry their true per-part frequencies, so the learned
phases can be compared with ground truth before the generator is trained.
Epoch counts are cut well below the toy preset; expect a few minutes on one CPU.
"""
import sys

import numpy as np
import torch

from partphase.container import build_dataset
from partphase.metrics import foot_skate, l2_global
from partphase.pae import dataset_phases, dominant_channel, extract_phase_sequence
from partphase.sampler import rollout
from partphase.skeleton import MotionClip, make_partition
from partphase.synth import part_truth, synthetic_clips
from partphase.training import TrainConfig, train_bpmoe, train_phase_autoencoders, train_sampler

torch.set_num_threads(1)
quick = "--quick" in sys.argv
cfg = TrainConfig.toy(pae_epochs=4 if quick else 15, moe_epochs=4 if quick else 20,
                      sampler_epochs=4 if quick else 20)
part = make_partition("two")
ds = build_dataset(synthetic_clips(("walk", "highknees", "flapping"), clips_per_style=2, frames=600, seed=0), "two")
print(f"{len(ds)} windows of {ds.window_length} frames")

paes, log = train_phase_autoencoders(ds, part, cfg)
print("phase autoencoders: loss", [round(x, 4) for x in log.epoch_means()[::max(1, cfg.pae_epochs // 4)]])

# learned frequency of the dominant channel against the generator's truth; on a
# set this small a part can lock onto its second harmonic (twice the true F)
clip = synthetic_clips(("highknees",), 1, 300, seed=42)[0]
out = extract_phase_sequence(clip, part, paes)
truth = part_truth(clip.truth, part)
for i, name in enumerate(part.group_names):
    d = dominant_channel(out["amplitude"])[i]
    print(f"  {name}: learned F {np.median(out['frequency'][30:-30, i, d]):.4f}, true F {truth[0, i, 1]:.4f}")

ds.phases = dataset_phases(ds, part, paes)
bpmoe, log = train_bpmoe(ds, part, config=cfg)
print("BPMoE: final reconstruction", round(log.epoch_means("rec")[-1], 4))
sampler, log = train_sampler(ds, part, bpmoe, config=cfg)
print("sampler: final last-frame loss", round(log.epoch_means("last")[-1], 4))

# in-between 35 frames of window 0, style taken from its first second
s = torch.as_tensor(ds.states(), dtype=torch.float32)
p = torch.as_tensor(ds.phases, dtype=torch.float32)
start, d = 20, 35
with torch.no_grad():
    style = sampler.encode_style(p[:1, :30])
    res = rollout(bpmoe, sampler, s[:1, start], s[:1, start + d], d, style, p[:1, start])
gen = MotionClip.from_states(res["states"][0].double().numpy(), ds.skeleton)
gt = ds.window(0).slice(start + 1, start + d + 1)
final = np.linalg.norm(gen.positions[-1] - gt.positions[-1], axis=-1).mean()
print(f"final-frame error {final:.2f} (skeleton height {ds.skeleton.height():.0f})")
print(f"L2 {l2_global(gt.positions, gen.positions):.2f}, skating gen {foot_skate(gen):.3f} vs gt {foot_skate(gt):.3f}")
