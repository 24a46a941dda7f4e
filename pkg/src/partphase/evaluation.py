"""Style-swap test sets, benchmark runs and the style-encoder ablation."""
import json
import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import torch

from .errors import ConfigError, StructureError
from .metrics import foot_skate, joint_angles, l2_global, npss
from .sampler import MIN_STYLE_FRAMES, rollout
from .skeleton import DEFAULT_FOOT_JOINTS, MotionClip, velocities_from_positions
from .rotations import gram_schmidt_6d, matrix_to_6d, sixd_to_matrix

VARIANTS = ("upper", "left-upper", "right-upper")
# variant -> partition scheme -> groups to swap
VARIANT_GROUPS = {
    "upper": {"two": ("upper_limbs",), "five": ("left_arm", "right_arm")},
    "left-upper": {"five": ("left_arm",)},
    "right-upper": {"five": ("right_arm",)},
}
DEFAULT_LENGTHS = (120, 140, 160)


@dataclass
class StyleSwapCase:
    base: int
    target: int
    base_style: str
    target_style: str
    variant: str
    joints: tuple
    parts: tuple
    clip: MotionClip
    phases: Optional[np.ndarray] = None


def swap_groups(partition, variant):
    """Part indices of ``partition`` swapped by ``variant``."""
    if variant not in VARIANT_GROUPS:
        raise ConfigError(f"unknown style-swap variant {variant!r}; choose from {VARIANTS}")
    names = VARIANT_GROUPS[variant].get(partition.name)
    if names is None:
        raise ConfigError(f"variant {variant!r} is not a union of {partition.name!r} partition groups")
    return tuple(partition.group_names.index(n) for n in names)


def _attach_frame(clip, joint):
    return sixd_to_matrix(clip.rotations[:, joint]), clip.positions[:, joint]


def swap_parts(base, donor, joints, anchor):
    """``base`` with ``joints`` taken from ``donor``, rigidly re-attached at ``anchor``.

    The donor's chain is expressed relative to its own anchor joint and placed
    on the base's anchor, so local rotations of the swapped chain come from the
    donor while every other joint of ``base`` is left bit-identical. The donor
    is looped when it is shorter than the base.
    """
    t = base.n_frames
    idx = np.arange(t) % donor.n_frames
    joints = list(joints)
    rb, pb = _attach_frame(base, anchor)
    rd, pd = _attach_frame(donor, anchor)
    rd, pd = rd[idx], pd[idx]
    align = rb @ np.swapaxes(rd, -1, -2)  # donor anchor frame -> base anchor frame
    pos = base.positions.copy()
    rot = base.rotations.copy()
    rel = donor.positions[idx][:, joints] - pd[:, None]
    pos[:, joints] = np.einsum("tij,tkj->tki", align, rel) + pb[:, None]
    mats = np.einsum("tij,tkjl->tkil", align, sixd_to_matrix(donor.rotations[idx][:, joints]))
    rot[:, joints] = gram_schmidt_6d(matrix_to_6d(mats))
    vel = base.velocities.copy()
    vel[:, joints] = velocities_from_positions(pos)[:, joints]
    return replace(base, positions=pos, velocities=vel, rotations=rot,
                   meta=dict(base.meta, swapped=joints))


def build_styleswap_testset(dataset, partition, variant="upper", seed=0, windows=None):
    """One case per base window, with a seeded random target style.

    Swapped parts get their positions and rotations from a random window of a
    different style (frame-index aligned) and, if the dataset carries phases,
    their phases too.
    """
    styles = sorted({r.get("style") for r in dataset.records if r.get("style") is not None})
    if len(styles) < 2:
        raise StructureError("style swapping needs at least two styles in the dataset")
    parts = swap_groups(partition, variant)
    joints = tuple(sorted(j for p in parts for j in partition.groups[p]))
    parents = dataset.skeleton.parents
    anchors = {parents[j] for j in joints if parents[j] not in joints}
    if len(anchors) != 1:
        # both arms hang off the same spine joint on the shipped skeleton
        raise StructureError(f"swapped joints attach to {len(anchors)} joints; expected one")
    anchor = anchors.pop()
    by_style = {s: [i for i, r in enumerate(dataset.records) if r.get("style") == s] for s in styles}
    rng = np.random.default_rng(seed)
    cases = []
    for b in (range(len(dataset)) if windows is None else windows):
        base_style = dataset.records[b].get("style")
        choices = [s for s in styles if s != base_style]
        tstyle = choices[int(rng.integers(len(choices)))]
        tw = by_style[tstyle][int(rng.integers(len(by_style[tstyle])))]
        base, donor = dataset.window(b), dataset.window(tw)
        clip = swap_parts(base, donor, joints, anchor)
        phases = None
        if dataset.phases is not None:
            phases = dataset.phases[b].copy()
            idx = np.arange(phases.shape[0]) % dataset.phases.shape[1]
            phases[:, list(parts)] = dataset.phases[tw][idx][:, list(parts)]
        cases.append(StyleSwapCase(b, tw, base_style, tstyle, variant, joints, parts, clip, phases))
    return cases


def plain_testset(dataset, windows=None):
    """Unmodified windows as cases (no swap)."""
    out = []
    for i in (range(len(dataset)) if windows is None else windows):
        style = dataset.records[i].get("style")
        ph = None if dataset.phases is None else dataset.phases[i].copy()
        out.append(StyleSwapCase(i, i, style, style, "none", (), (), dataset.window(i), ph))
    return out


# ----------------------------------------------------------------- benchmark

@dataclass
class InbetweenModel:
    """A trained (BPMoE, sampler) pair; ``None`` models stand for ground truth."""
    bpmoe: Optional[torch.nn.Module] = None
    sampler: Optional[torch.nn.Module] = None

    @property
    def is_ground_truth(self):
        return self.bpmoe is None


@torch.no_grad()
def infill_case(model, case, length, start=0, foot_joints=DEFAULT_FOOT_JOINTS):
    """Generate frames ``start+1 .. start+length`` of ``case`` and return ``(gt clip, generated clip)``."""
    clip = case.clip
    gt = clip.slice(start + 1, start + length + 1)
    if model.is_ground_truth:
        return gt, gt
    states = torch.as_tensor(clip.states(), dtype=torch.float32)
    phases = torch.as_tensor(case.phases, dtype=torch.float32)
    ex = phases[:MIN_STYLE_FRAMES][None] if model.sampler.style_kind == "phase" \
        else model.sampler.norm(states[:MIN_STYLE_FRAMES])[None]
    style = model.sampler.encode_style(ex)
    out = rollout(model.bpmoe, model.sampler, states[start][None], states[start + length][None], length,
                  style, phases[start][None])
    gen = MotionClip.from_states(out["states"][0].numpy().astype(np.float64), clip.skeleton, fps=clip.fps)
    return gt, gen


def evaluate_cases(model, cases, length, foot_joints=DEFAULT_FOOT_JOINTS, unit_scale=1.0):
    """Mean NPSS / L2 / skating over the cases long enough for ``length``; ``None`` if none are."""
    usable = [c for c in cases if c.clip.n_frames > length]
    if not usable or (not model.is_ground_truth and any(c.phases is None for c in usable)):
        return None
    vals = {"npss": [], "l2": [], "skating": []}
    for c in usable:
        gt, gen = infill_case(model, c, length, foot_joints=foot_joints)
        vals["npss"].append(npss(joint_angles(gt), joint_angles(gen)))
        vals["l2"].append(l2_global(gt.positions * unit_scale, gen.positions * unit_scale))
        vals["skating"].append(foot_skate(gen, foot_joints, unit_scale=unit_scale))
    res = {k: float(np.mean(v)) for k, v in vals.items()}
    res["cases"] = len(usable)
    return res


def benchmark(models, testsets, lengths=DEFAULT_LENGTHS, seed=0, dataset_hash=None,
              foot_joints=DEFAULT_FOOT_JOINTS, unit_scale=1.0):
    """Rows for every (model, length, test set); lengths the cases cannot cover are reported missing."""
    torch.manual_seed(seed)
    rows = []
    for name, model in models.items():
        for length in lengths:
            for tname, cases in testsets.items():
                row = {"model": name, "length": int(length), "testset": tname}
                res = evaluate_cases(model, cases, int(length), foot_joints, unit_scale)
                if res is None:
                    row.update(npss=None, l2=None, skating=None, cases=0, missing=True)
                else:
                    row.update(res, missing=False)
                rows.append(row)
    return {"meta": {"seed": seed, "dataset_hash": dataset_hash, "lengths": [int(x) for x in lengths],
                     "models": list(models), "testsets": list(testsets)},
            "rows": rows}


def _fmt(v, width):
    if v is None:
        return "-".rjust(width)
    return (f"{v:.3f}" if abs(v) < 1e5 else f"{v:.2e}").rjust(width)


def format_report(report):
    """Aligned text table: one block per test set, models down, (metric x length) across."""
    lengths = report["meta"]["lengths"]
    metrics = (("npss", "NPSS"), ("l2", "L2"), ("skating", "Skate"))
    names = report["meta"]["models"]
    w0 = max([len("Method")] + [len(n) for n in names]) + 2
    w = 10
    lines = []
    for tname in report["meta"]["testsets"]:
        lines.append(f"[{tname}]")
        head1 = "".ljust(w0) + "".join(label.center(w * len(lengths)) for _, label in metrics)
        head2 = "Method".ljust(w0) + "".join(str(n).rjust(w) for _ in metrics for n in lengths)
        lines += [head1.rstrip(), head2, "-" * len(head2)]
        for name in names:
            cells = []
            for key, _ in metrics:
                for n in lengths:
                    row = next(r for r in report["rows"]
                               if r["model"] == name and r["length"] == n and r["testset"] == tname)
                    cells.append(_fmt(row[key], w))
            lines.append(name.ljust(w0) + "".join(cells))
        lines.append("")
    return "\n".join(lines)


def write_report(report, out_dir, stem="benchmark"):
    os.makedirs(out_dir, exist_ok=True)
    jpath = os.path.join(out_dir, f"{stem}.json")
    tpath = os.path.join(out_dir, f"{stem}.txt")
    with open(jpath, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    with open(tpath, "w") as f:
        f.write(format_report(report))
    return jpath, tpath


def style_encoder_ablation(dataset, partition, bpmoe, phase_models, config, testsets, lengths, log_dir=None):
    """Train one sampler per style-encoder kind on a frozen BPMoE and benchmark both."""
    from .training import train_sampler
    models = {}
    for kind in ("phase", "motion"):
        cfg = replace(config, style_encoder=kind)
        log_path = None if log_dir is None else os.path.join(log_dir, f"ablation_{kind}.jsonl")
        sampler, _ = train_sampler(dataset, partition, bpmoe, phase_models, cfg, log_path)
        models[f"{kind}-style"] = InbetweenModel(bpmoe, sampler)
    report = benchmark(models, testsets, lengths, config.seed, dataset.digest())
    report["meta"]["ablation"] = "style encoder"
    return report
