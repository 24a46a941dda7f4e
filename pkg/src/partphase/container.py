"""The ``pbw-1`` dataset container.

A dataset is a directory holding ``pbw.json`` (skeleton, fps, unit scale,
partition scheme and the window index) next to raw little-endian float32
arrays, one fixed-size record per window::

    positions.f32   (N, L, B, 3)
    velocities.f32  (N, L, B, 3)
    rotations.f32   (N, L, B, 6)
    truth.f32       (N, L, B, 3)   synthetic datasets only: per-joint [A, F, S]
    phases.f32      (N, L, n, 2m)  optional, written after phase extraction
"""
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import StructureError
from .skeleton import MotionClip, Skeleton, prepare_windows

FORMAT = "pbw-1"
MANIFEST = "pbw.json"
_DTYPE = np.dtype("<f4")


@dataclass
class MotionDataset:
    skeleton: Skeleton
    positions: np.ndarray
    velocities: np.ndarray
    rotations: np.ndarray
    records: list
    fps: float = 30.0
    unit_scale: float = 1.0  # centimetres per skeleton unit
    scheme: str = "two"
    window_length: int = 120
    overlap: int = 20
    truth: Optional[np.ndarray] = None
    phases: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def styles(self):
        return sorted({r.get("style") for r in self.records if r.get("style") is not None})

    def window(self, i):
        meta = dict(self.records[i], window=i)
        truth = None if self.truth is None else self.truth[i].astype(float)
        return MotionClip(self.positions[i].astype(float), self.velocities[i].astype(float),
                          self.rotations[i].astype(float), self.skeleton, self.fps,
                          self.records[i].get("style"), truth, meta)

    def states(self):
        """All windows as flattened ``(N, L, 12B)`` float32 state arrays."""
        n, length = self.positions.shape[:2]
        return np.concatenate([self.positions.reshape(n, length, -1), self.velocities.reshape(n, length, -1),
                               self.rotations.reshape(n, length, -1)], axis=-1)

    def clip_groups(self):
        """Windows grouped per source clip (and mirror flag), sorted by start frame."""
        groups = {}
        for i, r in enumerate(self.records):
            groups.setdefault((r.get("clip"), bool(r.get("mirrored", False))), []).append(i)
        return [sorted(ix, key=lambda i: self.records[i].get("start", 0)) for ix in groups.values()]

    def subset(self, indices):
        indices = list(indices)
        pick = (lambda a: None if a is None else a[indices])
        return replace(self, positions=self.positions[indices], velocities=self.velocities[indices],
                       rotations=self.rotations[indices], records=[self.records[i] for i in indices],
                       truth=pick(self.truth), phases=pick(self.phases))

    def digest(self):
        h = hashlib.sha256()
        h.update(json.dumps(self._manifest(), sort_keys=True).encode())
        for a in (self.positions, self.velocities, self.rotations, self.truth):
            if a is not None:
                h.update(np.ascontiguousarray(a, dtype=_DTYPE).tobytes())
        return h.hexdigest()

    def _arrays(self):
        arrays = {"positions": self.positions, "velocities": self.velocities, "rotations": self.rotations}
        if self.truth is not None:
            arrays["truth"] = self.truth
        if self.phases is not None:
            arrays["phases"] = self.phases
        return arrays

    def _manifest(self):
        return {
            "format": FORMAT,
            "skeleton": self.skeleton.to_dict(),
            "fps": self.fps,
            "unit_scale": self.unit_scale,
            "scheme": self.scheme,
            "window_length": self.window_length,
            "overlap": self.overlap,
            "windows": self.records,
            "extra": self.extra,
        }

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        manifest = self._manifest()
        manifest["arrays"] = {}
        for name, arr in self._arrays().items():
            fname = f"{name}.f32"
            np.ascontiguousarray(arr, dtype=_DTYPE).tofile(os.path.join(directory, fname))
            manifest["arrays"][name] = {"file": fname, "shape": list(arr.shape), "dtype": "<f4"}
        with open(os.path.join(directory, MANIFEST), "w") as f:
            json.dump(manifest, f, indent=1)
        return directory

    @classmethod
    def load(cls, directory):
        path = os.path.join(directory, MANIFEST)
        if not os.path.exists(path):
            raise StructureError(f"{directory} is not a {FORMAT} dataset (missing {MANIFEST})")
        with open(path) as f:
            m = json.load(f)
        if m.get("format") != FORMAT:
            raise StructureError(f"unsupported dataset format {m.get('format')!r}")
        arrays = {}
        for name, info in m["arrays"].items():
            shape = tuple(info["shape"])
            data = np.fromfile(os.path.join(directory, info["file"]), dtype=_DTYPE)
            if data.size != int(np.prod(shape)):
                raise StructureError(f"array {name!r} holds {data.size} values, expected {np.prod(shape)}")
            arrays[name] = data.reshape(shape)
        return cls(Skeleton.from_dict(m["skeleton"]), arrays["positions"], arrays["velocities"],
                   arrays["rotations"], m["windows"], m["fps"], m["unit_scale"], m["scheme"],
                   m["window_length"], m["overlap"], arrays.get("truth"), arrays.get("phases"),
                   m.get("extra", {}))


def build_dataset(clips, scheme="two", length=120, overlap=20, augment_mirror=True, unit_scale=1.0):
    """Window, facing-normalize and (optionally) mirror ``clips`` into a dataset."""
    if not clips:
        raise StructureError("no clips to build a dataset from")
    pos, vel, rot, tru, records = [], [], [], [], []
    with_truth = all(c.truth is not None for c in clips)
    for ci, clip in enumerate(clips):
        for w in prepare_windows(clip, length, overlap, augment_mirror):
            pos.append(w.positions)
            vel.append(w.velocities)
            rot.append(w.rotations)
            if with_truth:
                tru.append(w.truth)
            records.append({"clip": clip.meta.get("name", ci), "style": clip.style_label,
                            "start": int(w.meta.get("start", 0)),
                            "mirrored": bool(w.meta.get("mirrored", False))})
    if not pos:
        raise StructureError("every clip is shorter than the window length")
    f32 = (lambda xs: np.stack(xs).astype(_DTYPE))
    return MotionDataset(clips[0].skeleton, f32(pos), f32(vel), f32(rot), records, clips[0].fps,
                         unit_scale, scheme, length, overlap, f32(tru) if with_truth else None)


def save_clip(clip, directory, phase_trace=None):
    """Write a single clip as a one-window pbw-1 dataset plus an optional JSON phase sidecar."""
    ds = MotionDataset(clip.skeleton, clip.positions[None].astype(_DTYPE), clip.velocities[None].astype(_DTYPE),
                       clip.rotations[None].astype(_DTYPE), [{"clip": 0, "style": clip.style_label, "start": 0}],
                       clip.fps, window_length=clip.n_frames, overlap=0)
    ds.save(directory)
    if phase_trace is not None:
        with open(os.path.join(directory, "phase_trace.json"), "w") as f:
            json.dump({k: np.asarray(v).tolist() for k, v in phase_trace.items()}, f)
    return directory
