"""Shared fixtures.

``tiny`` is a seconds-scale pipeline for unit tests. ``toy`` trains the full
three-stage pipeline on the 5-style synthetic set once per session (a few
minutes on one CPU) and backs the acceptance experiments.
"""
from types import SimpleNamespace

import numpy as np
import pytest
import torch

from partphase.container import build_dataset
from partphase.pae import dataset_phases
from partphase.skeleton import make_partition
from partphase.synth import synthetic_clips
from partphase.training import TrainConfig, train_bpmoe, train_phase_autoencoders, train_sampler

torch.set_num_threads(1)


def tiny_config(**kw):
    base = dict(pae_epochs=2, pae_steps=4, pae_window=31, pae_kernel=9, pae_channels=4, moe_epochs=2, moe_steps=3,
                moe_hidden=32, encoder_hidden=32, encoder_out=16, gate_hidden=16, latent_dim=8, sampler_epochs=2,
                sampler_steps=2, lstm_hidden=32, style_dim=16, batch_size=4, curriculum_start=6, curriculum_end=10)
    base.update(kw)
    return TrainConfig.toy(**base)


@pytest.fixture(scope="session")
def tiny_dataset():
    clips = synthetic_clips(styles=("walk", "highknees"), clips_per_style=1, frames=240, seed=5)
    return build_dataset(clips, "two", length=60, overlap=10)


@pytest.fixture(scope="session")
def tiny(tiny_dataset):
    part = make_partition("two")
    cfg = tiny_config()
    paes, _ = train_phase_autoencoders(tiny_dataset, part, cfg)
    ds = tiny_dataset.subset(range(len(tiny_dataset)))
    ds.phases = dataset_phases(ds, part, paes)
    bpmoe, _ = train_bpmoe(ds, part, config=cfg)
    sampler, _ = train_sampler(ds, part, bpmoe, config=cfg)
    return SimpleNamespace(ds=ds, part=part, cfg=cfg, paes=paes, bpmoe=bpmoe, sampler=sampler)


@pytest.fixture(scope="session")
def toy():
    """The criterion-5 model: toy widths, 5 styles x 4 clips x 1000 frames, seed 0."""
    part = make_partition("two")
    cfg = TrainConfig.toy()
    ds = build_dataset(synthetic_clips(clips_per_style=4, frames=1000, seed=0), "two")
    paes, pae_log = train_phase_autoencoders(ds, part, cfg)
    ds.phases = dataset_phases(ds, part, paes)
    bpmoe, moe_log = train_bpmoe(ds, part, config=cfg)
    sampler, smp_log = train_sampler(ds, part, bpmoe, config=cfg)
    return SimpleNamespace(ds=ds, part=part, cfg=cfg, paes=paes, bpmoe=bpmoe, sampler=sampler,
                           logs={"phase": pae_log, "bpmoe": moe_log, "sampler": smp_log})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------- acceptance criterion report

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    entry = _CRITERIA.setdefault(mark.args[0], {"ok": True, "details": []})
    entry["ok"] &= not rep.failed
    entry["details"] += [v for k, v in item.user_properties if k == "detail"]
    if rep.failed and rep.when != "call":
        entry["details"].append(f"{rep.when} error in {item.name}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        detail = "; ".join(dict.fromkeys(e["details"]))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if e['ok'] else 'FAIL'}  {detail}")
