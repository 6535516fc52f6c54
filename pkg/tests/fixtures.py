"""Small hand-built models and jobs shared by the controller and acceptance tests."""

from __future__ import annotations

import numpy as np

from shotrf.controller import SegmentJob
from shotrf.model import init_params
from shotrf.oracle import SyntheticCurveParams
from shotrf.segmenter import Segment
from shotrf.texture import FeatureVector


def constant_model(d: int, rf: float, schema: str = ""):
    """Predicts `rf` for every input."""
    m = init_params(d, 4, 1, schema_version=schema)
    m.tensors["head_w"][:] = 0.0
    m.tensors["head_b"][:] = rf
    return m


def echo_model(d: int, index: int, offset: float = 0.0, schema: str = ""):
    """Predicts x[index] + offset: exposes which value sits at `index`."""
    m = init_params(d, 4, 1, schema_version=schema, skip_input=index)
    m.tensors["head_w"][:] = 0.0
    m.tensors["head_b"][:] = offset
    return m


def curve_job(index: int, curve: SyntheticCurveParams, seed: int = 0) -> SegmentJob:
    return SegmentJob(index, Segment(0, 8, f"{index:016x}"), seed, curve)


def base_vector(d: int = 6, seed: int = 0) -> FeatureVector:
    return FeatureVector("test-v1", np.random.default_rng(seed).normal(0, 1, d))


def perturbed_model(seed: int = 0, d: int = 8, h: int = 8, r: int = 1, **kw):
    """A small model with every tensor moved off its initial (symmetric) values."""
    m = init_params(d, h, r, seed=seed, **kw)
    rng = np.random.default_rng(seed + 100)
    for k, t in m.tensors.items():
        if k == "bn_running_var":
            t[...] = rng.uniform(0.5, 2.0, t.shape)
        else:
            t += rng.normal(0, 0.3, t.shape)
    return m
