import dataclasses
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from sweeprecon import pipeline
from sweeprecon.config import desk_profile


def tiny_profile():
    cfg = desk_profile()
    return dataclasses.replace(
        cfg, n_train=3, n_heldout=2, B=2, max_sweeps=3, points_per_cloud=64,
        stage_one=dataclasses.replace(cfg.stage_one, epochs=10, n_surface=200,
                                      n_uniform=100),
        infer=dataclasses.replace(cfg.infer, iters=20, max_points=64),
        stage_two=dataclasses.replace(cfg.stage_two, epochs=3),
        eval=dataclasses.replace(cfg.eval, n_samples=2000, resolution=32),
    )


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_profile()


@pytest.fixture(scope="session")
def tiny_run(tiny_cfg, tmp_path_factory):
    """A complete miniature pipeline run shared across tests."""
    out = tmp_path_factory.mktemp("tiny_run")
    report = pipeline.run_pipeline(tiny_cfg, out)
    return out, report


@pytest.fixture(scope="session")
def desk_cfg():
    return desk_profile()


@pytest.fixture(scope="session")
def desk_run(desk_cfg, tmp_path_factory):
    """The full desk-scale experiment; returns (out_dir, report, wall seconds)."""
    out = tmp_path_factory.mktemp("desk_run")
    t0 = time.time()
    report = pipeline.run_pipeline(desk_cfg, out)
    return out, report, time.time() - t0


@pytest.fixture(scope="session")
def desk_ablations(desk_cfg, desk_run):
    out = desk_run[0]
    return pipeline.run_ablations(desk_cfg, out)


@pytest.fixture(scope="session")
def small_decoder():
    """A decoder overfit to analytic sphere SDF samples (radius 0.5)."""
    from sweeprecon.sdf_model import DecoderConfig, SdfSampleSet, train_stage_one

    rng = np.random.default_rng(7)
    n = 4000
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    sdf = np.linalg.norm(pts, axis=1) - 0.5
    samples = SdfSampleSet(pts, sdf, 0, n)
    cfg = DecoderConfig(latent_dim=16, hidden=64, n_layers=4, skip_index=2)
    decoder, codebook, history = train_stage_one(
        [samples], cfg, epochs=400, lr=1e-3, seed=3, shape_ids=["sphere"])
    return decoder, codebook, history
