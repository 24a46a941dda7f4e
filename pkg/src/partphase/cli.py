"""``partphase`` command line: prepare, synth, train, infill, modulate, evaluate.

Every command writes its outputs under ``--out`` together with
``<out>/manifest.json`` recording the command line, resolved config, seed,
input hashes, output paths and timestamps.
"""
import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys

import numpy as np
import torch

from . import __version__
from .errors import PartPhaseError, ConfigError, StructureError, TrainingError

log = logging.getLogger("partphase")
SEED_ENV = "PHASE_INBETWEEN_SEED"


# ------------------------------------------------------------------ plumbing

def hash_path(path):
    """sha256 of a file, or of every file below a directory (sorted by relative path)."""
    h = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                full = os.path.join(root, name)
                h.update(os.path.relpath(full, path).encode())
                with open(full, "rb") as f:
                    h.update(f.read())
    else:
        with open(path, "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def resolve_seed(arg):
    if arg is not None:
        return int(arg)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_config_file(path):
    """JSON object, or ``key = value`` lines (``#`` comments, values parsed as JSON when possible)."""
    with open(path) as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = None
    if isinstance(data, dict):
        return data
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = _parse_value(v.strip())
    return out


def build_config(args, seed):
    from .training import TrainConfig
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _parse_value(v.strip())
    preset = overrides.pop("preset", getattr(args, "preset", "full"))
    base = (TrainConfig.toy() if preset == "toy" else TrainConfig.full()).to_dict()
    unknown = set(overrides) - set(base)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base.update(overrides)
    base["seed"] = seed
    return TrainConfig.from_dict(base), preset


class Manifest:
    def __init__(self, command, args, seed):
        self.data = {"command": command, "argv": list(sys.argv[1:]) if args is None else args,
                     "version": __version__, "seed": seed, "config": {}, "inputs": {}, "outputs": [],
                     "started": dt.datetime.now(dt.timezone.utc).isoformat()}

    def input(self, path):
        if not os.path.exists(path):
            raise StructureError(f"input {path} does not exist")
        self.data["inputs"][os.path.abspath(path)] = hash_path(path)

    def output(self, path):
        self.data["outputs"].append(os.path.abspath(path))
        return path

    def write(self, out_dir):
        self.data["finished"] = dt.datetime.now(dt.timezone.utc).isoformat()
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as f:
            json.dump(self.data, f, indent=2, sort_keys=True)
        return path


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text):
    return [int(x) for x in _floats(text)]


# ---------------------------------------------------------------- checkpoints

def checkpoint_paths(directory, n_parts=None):
    paths = {"bpmoe": os.path.join(directory, "bpmoe.ckpt"), "sampler": os.path.join(directory, "sampler.ckpt")}
    if n_parts is None:
        n_parts = len([f for f in os.listdir(directory) if f.startswith("phase_part")]) if os.path.isdir(directory) else 0
    paths["phase"] = [os.path.join(directory, f"phase_part{i}.ckpt") for i in range(n_parts)]
    return paths


def load_phase_models(directory, partition):
    from .training import load_model
    paths = checkpoint_paths(directory, partition.n_parts)["phase"]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise TrainingError(f"missing phase autoencoder checkpoint {missing[0]}; "
                            f"run `partphase train --stage phase` first")
    return [load_model(p, "phase")[0] for p in paths]


def load_stage(directory, component):
    from .training import load_model
    path = checkpoint_paths(directory, 0)[component]
    if not os.path.exists(path):
        raise TrainingError(f"missing {component} checkpoint {path}; run `partphase train --stage {component}` first")
    return load_model(path, component)[0]


def load_pipeline(directory, partition):
    if not os.path.isdir(directory):
        raise TrainingError(f"checkpoint directory {directory} does not exist")
    return load_phase_models(directory, partition), load_stage(directory, "bpmoe"), load_stage(directory, "sampler")


def _dataset_with_phases(path, paes=None):
    from .container import MotionDataset
    from .pae import dataset_phases
    from .skeleton import make_partition
    ds = MotionDataset.load(path)
    part = make_partition(ds.scheme)
    if paes is not None:
        ds.phases = dataset_phases(ds, part, paes)
    return ds, part


# ------------------------------------------------------------------ commands

def cmd_prepare(args, manifest):
    from .container import build_dataset
    from .skeleton import read_bvh, to_frame_states, resample
    if not os.path.isdir(args.bvh_dir):
        raise StructureError(f"{args.bvh_dir} is not a directory")
    files = sorted(f for f in os.listdir(args.bvh_dir) if f.lower().endswith(".bvh"))
    clips, failed = [], {}
    for name in files:
        path = os.path.join(args.bvh_dir, name)
        try:
            anim = read_bvh(path)
            clip = to_frame_states(anim, style_label=os.path.splitext(name)[0].split("_")[0])
            clip = resample(clip, args.fps)
            clip.meta["name"] = name
            clips.append(clip)
            manifest.input(path)
        except (PartPhaseError, OSError, ValueError) as e:
            failed[name] = str(e)
            log.warning("skipping %s: %s", name, e)
    manifest.data["failed"] = failed
    if not clips:
        raise StructureError(f"no readable BVH clips in {args.bvh_dir}")
    ds = build_dataset(clips, args.scheme, args.length, args.overlap, not args.no_mirror, args.unit_scale)
    target = manifest.output(os.path.join(args.out, "dataset"))
    ds.save(target)
    manifest.data["config"] = {"scheme": args.scheme, "fps": args.fps, "length": args.length,
                               "overlap": args.overlap, "mirror": not args.no_mirror, "unit_scale": args.unit_scale}
    manifest.data["dataset_hash"] = ds.digest()
    print(f"{len(clips)} clips -> {len(ds)} windows in {target}; {len(failed)} skipped")


SYNTH_DEFAULTS = {"styles": None, "clips_per_style": 4, "frames": 1000, "noise": 0.0, "length": 120,
                  "overlap": 20, "mirror": True, "scheme": "two"}


def cmd_synth(args, manifest):
    from .container import build_dataset
    from .synth import STYLES, synthetic_clips
    spec = dict(SYNTH_DEFAULTS)
    if args.spec:
        extra = read_config_file(args.spec)
        manifest.input(args.spec)
        unknown = set(extra) - set(spec) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
        spec.update(extra)
    spec["seed"] = manifest.data["seed"]
    styles = tuple(spec["styles"] or STYLES)
    clips = synthetic_clips(styles, int(spec["clips_per_style"]), int(spec["frames"]), spec["seed"],
                            float(spec["noise"]))
    ds = build_dataset(clips, spec["scheme"], int(spec["length"]), int(spec["overlap"]), bool(spec["mirror"]))
    target = manifest.output(os.path.join(args.out, "dataset"))
    ds.save(target)
    manifest.data["config"] = spec
    manifest.data["dataset_hash"] = ds.digest()
    print(f"{len(clips)} synthetic clips -> {len(ds)} windows in {target}")


def cmd_train(args, manifest):
    from .container import MotionDataset
    from .pae import dataset_phases
    from .skeleton import make_partition
    from .training import (load_model, save_model, train_bpmoe, train_phase_autoencoders, train_sampler)
    config, preset = build_config(args, manifest.data["seed"])
    manifest.data["config"] = dict(config.to_dict(), preset=preset)
    manifest.input(args.data)
    ds = MotionDataset.load(args.data)
    part = make_partition(ds.scheme)
    ckpt_dir = args.checkpoints or args.out
    paths = checkpoint_paths(args.out, part.n_parts)
    thash = hashlib.sha256((ds.digest() + json.dumps(config.to_dict(), sort_keys=True)).encode()).hexdigest()
    extra = {"scheme": ds.scheme, "dataset_hash": ds.digest()}
    stage = args.stage
    log_path = manifest.output(os.path.join(args.out, f"{stage}_loss.jsonl"))
    if not args.resume and os.path.exists(log_path):
        os.remove(log_path)
    if stage == "phase":
        models = None
        if args.resume:
            models = [load_model(p, "phase")[0] for p in paths["phase"]]
        models, losses = train_phase_autoencoders(ds, part, config, log_path, models)
        for i, m in enumerate(models):
            save_model(manifest.output(paths["phase"][i]), "phase", m, config, i, thash, extra)
    elif stage == "bpmoe":
        paes = load_phase_models(ckpt_dir, part)
        manifest.input(os.path.join(ckpt_dir, "phase_part0.ckpt"))
        ds.phases = dataset_phases(ds, part, paes)
        model = load_model(paths["bpmoe"], "bpmoe")[0] if args.resume else None
        model, losses = train_bpmoe(ds, part, None, config, log_path, model)
        save_model(manifest.output(paths["bpmoe"]), "bpmoe", model, config, None, thash, extra)
    elif stage == "sampler":
        bpmoe = load_stage(ckpt_dir, "bpmoe")
        manifest.input(checkpoint_paths(ckpt_dir)["bpmoe"])
        paes = load_phase_models(ckpt_dir, part)
        ds.phases = dataset_phases(ds, part, paes)
        model = load_model(paths["sampler"], "sampler")[0] if args.resume else None
        model, losses = train_sampler(ds, part, bpmoe, None, config, log_path, model)
        save_model(manifest.output(paths["sampler"]), "sampler", model, config, None, thash, extra)
    else:
        raise ConfigError(f"unknown stage {stage!r}")
    means = losses.epoch_means()
    manifest.data["final_loss"] = means[-1] if means else None
    manifest.data["resumed"] = bool(args.resume)
    print(f"stage {stage}: {len(means)} epochs, final mean loss {means[-1]:.5g}" if means else f"stage {stage}: no steps")


def _style_code(sampler, ds, window):
    from .sampler import MIN_STYLE_FRAMES
    states = torch.as_tensor(ds.states()[window, :MIN_STYLE_FRAMES], dtype=torch.float32)[None]
    phases = torch.as_tensor(ds.phases[window, :MIN_STYLE_FRAMES], dtype=torch.float32)[None]
    from .training import style_input
    return sampler.encode_style(style_input(sampler, states, phases))


def _check_frames(ds, clip, *frames):
    if not 0 <= clip < len(ds):
        raise ConfigError(f"clip index {clip} outside 0..{len(ds) - 1}")
    length = ds.positions.shape[1]
    for f in frames:
        if not 0 <= f < length:
            raise ConfigError(f"frame {f} outside the {length}-frame window")


@torch.no_grad()
def cmd_infill(args, manifest):
    from .container import MotionDataset, save_clip
    from .sampler import phase_trace, rollout
    from .skeleton import MotionClip, make_partition, write_bvh
    torch.manual_seed(manifest.data["seed"])
    manifest.input(args.data)
    manifest.input(args.checkpoints)
    part = make_partition(MotionDataset.load(args.data).scheme)
    paes, bpmoe, sampler = load_pipeline(args.checkpoints, part)
    ds, _ = _dataset_with_phases(args.data, paes)
    target_frame = args.target_frame if args.target_frame is not None else args.start_frame + args.duration
    _check_frames(ds, args.clip, args.start_frame, target_frame)
    if args.duration < 1:
        raise ConfigError("duration must be at least 1")
    style_clip = args.clip if args.style_clip is None else args.style_clip
    _check_frames(ds, style_clip)
    states = torch.as_tensor(ds.states()[args.clip], dtype=torch.float32)
    phases = torch.as_tensor(ds.phases[args.clip], dtype=torch.float32)
    style = _style_code(sampler, ds, style_clip)
    out = rollout(bpmoe, sampler, states[args.start_frame][None], states[target_frame][None], args.duration,
                  style, phases[args.start_frame][None])
    gen = out["states"][0].numpy().astype(np.float64)
    clip = MotionClip.from_states(gen, ds.skeleton, fps=ds.fps)
    trace = phase_trace(out["theta"][0].numpy(), phases[args.start_frame].numpy())
    target = manifest.output(os.path.join(args.out, "clip"))
    save_clip(clip, target, trace)
    final = float(np.linalg.norm((clip.positions[-1] - ds.positions[args.clip, target_frame]), axis=-1).mean())
    manifest.data["config"] = {"clip": args.clip, "start_frame": args.start_frame, "target_frame": target_frame,
                               "duration": args.duration, "style_clip": style_clip}
    manifest.data["final_error"] = final
    if args.bvh:
        write_bvh(clip, manifest.output(os.path.join(args.out, "clip.bvh")))
    print(f"generated {clip.n_frames} frames; mean final joint error {final:.3f}")


def _parts(spec, partition):
    aliases = {"two": {"upper": [0], "lower": [1]}, "five": {"upper": [0, 1], "lower": [2, 3]}}
    out = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        if item.isdigit():
            out.append(int(item))
        elif item in partition.group_names:
            out.append(partition.group_names.index(item))
        elif item in aliases.get(partition.name, {}):
            out += aliases[partition.name][item]
        else:
            raise ConfigError(f"unknown body part {item!r}; choose from {partition.group_names}")
    if not out or any(not 0 <= p < partition.n_parts for p in out):
        raise ConfigError(f"part indices must lie in 0..{partition.n_parts - 1}")
    return sorted(set(out))


@torch.no_grad()
def cmd_modulate(args, manifest):
    from .container import MotionDataset, save_clip
    from .modulation import MEASURES, first_peak, plot_curves, sweep, write_curves
    from .skeleton import MotionClip, make_partition
    if args.measure not in MEASURES:
        raise ConfigError(f"unknown measure {args.measure!r}; choose from {MEASURES}")
    torch.manual_seed(manifest.data["seed"])
    manifest.input(args.data)
    manifest.input(args.checkpoints)
    part = make_partition(MotionDataset.load(args.data).scheme)
    paes, bpmoe, sampler = load_pipeline(args.checkpoints, part)
    ds, _ = _dataset_with_phases(args.data, paes)
    target_frame = args.start_frame + args.duration
    _check_frames(ds, args.clip, args.start_frame, target_frame)
    parts = _parts(args.parts, part)
    amp, freq = _floats(args.amp_factors), _floats(args.freq_factors)
    if not amp and not freq:
        raise ConfigError("give at least one amplitude or frequency factor")
    states = torch.as_tensor(ds.states()[args.clip], dtype=torch.float32)
    phases = torch.as_tensor(ds.phases[args.clip], dtype=torch.float32)
    style = _style_code(sampler, ds, args.clip)
    res = sweep(bpmoe, sampler, states[args.start_frame][None], states[target_frame][None], args.duration, style,
                phases[args.start_frame][None], parts, amp, freq, args.measure)
    os.makedirs(args.out, exist_ok=True)
    summary = {}
    for label, r in res.items():
        clip = MotionClip.from_states(r["states"], ds.skeleton, fps=ds.fps)
        save_clip(clip, manifest.output(os.path.join(args.out, label.replace("=", "_"))))
        write_curves(manifest.output(os.path.join(args.out, f"curve_{label.replace('=', '_')}.csv")),
                     {label: r["curve"]})
        summary[label] = {"peak": float(r["curve"].max()), "first_peak": first_peak(r["curve"])}
    for kind in ("amp", "freq"):
        curves = {k: r["curve"] for k, r in res.items() if k.startswith(kind + "=")}
        if curves:
            write_curves(manifest.output(os.path.join(args.out, f"curves_{kind}.csv")), curves)
            plot_curves(manifest.output(os.path.join(args.out, f"curves_{kind}.png")), curves, args.measure)
    with open(manifest.output(os.path.join(args.out, "summary.json")), "w") as f:
        json.dump(summary, f, indent=2)
    manifest.data["config"] = {"clip": args.clip, "start_frame": args.start_frame, "duration": args.duration,
                               "parts": parts, "amp_factors": amp, "freq_factors": freq, "measure": args.measure}
    for label, s in summary.items():
        print(f"{label:>10}  peak {s['peak']:.3f}  first peak at frame {s['first_peak'] + 1}")


def cmd_evaluate(args, manifest):
    from .container import MotionDataset
    from .evaluation import (InbetweenModel, benchmark, build_styleswap_testset, plain_testset, write_report)
    from .skeleton import make_partition
    torch.manual_seed(manifest.data["seed"])
    manifest.input(args.testset)
    base = MotionDataset.load(args.testset)
    part = make_partition(base.scheme)
    lengths = _ints(args.lengths)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    windows = None if args.max_cases is None else list(range(min(args.max_cases, len(base))))
    specs = []
    for item in args.checkpoints:
        name, _, path = item.rpartition("=")
        if path == "gt":
            specs.append((name or "GT", None))
            continue
        if not os.path.isdir(path) or not os.path.exists(os.path.join(path, "sampler.ckpt")):
            raise TrainingError(f"checkpoint directory {path} is missing or incomplete (needs sampler.ckpt)")
        specs.append((name or os.path.basename(os.path.normpath(path)), path))
    rows, names = [], []
    report = None
    for name, path in specs:
        if path is None:
            ds, model = base, InbetweenModel()
        else:
            manifest.input(path)
            paes, bpmoe, sampler = load_pipeline(path, part)
            ds, _ = _dataset_with_phases(args.testset, paes)
            model = InbetweenModel(bpmoe, sampler)
        testsets = {}
        for v in variants:
            testsets[v] = plain_testset(ds, windows) if v == "none" else \
                build_styleswap_testset(ds, part, v, manifest.data["seed"], windows)
        report = benchmark({name: model}, testsets, lengths, manifest.data["seed"], base.digest(),
                           unit_scale=base.unit_scale)
        rows += report["rows"]
        names.append(name)
    report["rows"] = rows
    report["meta"]["models"] = names
    for p in write_report(report, args.out):
        manifest.output(p)
    manifest.data["config"] = {"lengths": lengths, "variants": variants, "checkpoints": args.checkpoints,
                               "max_cases": args.max_cases}
    from .evaluation import format_report
    print(format_report(report))


# ---------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="partphase", description="Body-part phase motion in-betweening.")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", required=True, help="output directory (manifest goes here)")
        sp.add_argument("--seed", type=int, default=None, help=f"defaults to ${SEED_ENV}, else 0")

    sp = sub.add_parser("prepare", help="window and augment a directory of BVH files")
    sp.add_argument("--bvh-dir", required=True)
    sp.add_argument("--scheme", default="two", choices=("two", "five"))
    sp.add_argument("--fps", type=float, default=30.0)
    sp.add_argument("--length", type=int, default=120)
    sp.add_argument("--overlap", type=int, default=20)
    sp.add_argument("--unit-scale", type=float, default=1.0, help="skeleton units to centimetres")
    sp.add_argument("--no-mirror", action="store_true")
    common(sp)

    sp = sub.add_parser("synth", help="generate a synthetic dataset with ground-truth phases")
    sp.add_argument("--spec", help="JSON or key=value file: styles, clips_per_style, frames, noise, length, ...")
    common(sp)

    sp = sub.add_parser("train", help="run one training stage")
    sp.add_argument("--stage", required=True, choices=("phase", "bpmoe", "sampler"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", help="JSON or key=value config file")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    sp.add_argument("--preset", default="full", choices=("full", "toy"))
    sp.add_argument("--checkpoints", help="directory holding earlier stages (default: --out)")
    sp.add_argument("--resume", action="store_true", help="continue from this stage's checkpoint in --out")
    common(sp)

    sp = sub.add_parser("infill", help="generate a transition between two frames")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoints", required=True)
    sp.add_argument("--clip", type=int, default=0, help="window index in the dataset")
    sp.add_argument("--start-frame", type=int, default=0)
    sp.add_argument("--target-frame", type=int, default=None, help="default: start + duration")
    sp.add_argument("--duration", type=int, default=30)
    sp.add_argument("--style-clip", type=int, default=None, help="window index of the style exemplar")
    sp.add_argument("--bvh", action="store_true", help="also export BVH")
    common(sp)

    sp = sub.add_parser("modulate", help="amplitude/frequency sweeps on selected body parts")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoints", required=True)
    sp.add_argument("--clip", type=int, default=0)
    sp.add_argument("--start-frame", type=int, default=0)
    sp.add_argument("--duration", type=int, default=40)
    sp.add_argument("--amp-factors", default="")
    sp.add_argument("--freq-factors", default="")
    sp.add_argument("--parts", required=True, help="group names, indices, or upper/lower")
    sp.add_argument("--measure", required=True, help="limb-height, hand-distance or hand-height")
    common(sp)

    sp = sub.add_parser("evaluate", help="benchmark checkpoints on a test set")
    sp.add_argument("--checkpoints", required=True, nargs="+", help="[name=]dir, or gt for ground truth")
    sp.add_argument("--testset", required=True)
    sp.add_argument("--lengths", default="120,140,160")
    sp.add_argument("--variants", default="none", help="none, upper, left-upper, right-upper")
    sp.add_argument("--max-cases", type=int, default=None)
    common(sp)
    return p


COMMANDS = {"prepare": cmd_prepare, "synth": cmd_synth, "train": cmd_train, "infill": cmd_infill,
            "modulate": cmd_modulate, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        seed = resolve_seed(args.seed)
        os.makedirs(args.out, exist_ok=True)
        manifest = Manifest(args.command, list(sys.argv[1:] if argv is None else argv), seed)
        COMMANDS[args.command](args, manifest)
        manifest.write(args.out)
    except PartPhaseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
