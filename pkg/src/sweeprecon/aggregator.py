"""Element-to-set latent aggregation: a shared point-cloud encoder produces a
global feature per sweep, each merged with that sweep's latent code into an
element representation; symmetric pooling plus a dense mapping yields one
predicted latent code for the whole multi-sweep instance."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .autodiff import Tensor, backward, concat, stack_rows
from .geometry import PointCloud, fps
from .mesh import TriangleMesh
from .sdf_model import SdfDecoder, infer_latent, reconstruct


@dataclass(frozen=True)
class EncoderConfig:
    """Stacked shared point encoder: each stage applies a shared per-point
    dense layer, max-pools to a stage-global feature, and re-concatenates it
    onto the per-point features; the final stage pools and applies tanh."""

    widths: Tuple[int, ...] = (128, 256, 512, 1024)
    points_per_cloud: int = 256

    def __post_init__(self):
        if len(self.widths) < 1 or any(w <= 0 for w in self.widths):
            raise ValueError("need at least one positive stage width")
        if self.points_per_cloud < 1:
            raise ValueError("points_per_cloud must be >= 1")


@dataclass(frozen=True)
class AggregatorConfig:
    merge: str = "concat"        # "concat" | "multiply"
    pool: str = "avg"            # "avg" | "max"
    latent_dim: int = 256
    use_latents: bool = True     # False: encoder-only baseline (no merge/map)
    use_mapping: bool = True

    def __post_init__(self):
        if self.merge not in ("concat", "multiply"):
            raise ValueError(f"unknown merge mode {self.merge!r}")
        if self.pool not in ("avg", "max"):
            raise ValueError(f"unknown pool mode {self.pool!r}")

    def element_dim(self, encoder: EncoderConfig) -> int:
        g = encoder.widths[-1]
        if not self.use_latents:
            return g
        if self.merge == "multiply":
            if g != self.latent_dim:
                raise ValueError(
                    f"multiply merge needs final encoder width {self.latent_dim}, "
                    f"got {g}")
            return self.latent_dim
        return g + self.latent_dim


def init_aggregator(encoder: EncoderConfig, config: AggregatorConfig,
                    seed: int = 0) -> nn.ParameterSet:
    rng = np.random.default_rng(seed)
    params = nn.ParameterSet()
    width_in = 3
    for i, w in enumerate(encoder.widths):
        nn.init_dense(params, f"enc{i}", width_in, w, rng)
        width_in = 2 * w  # per-point features concatenated with pooled feature
    if config.use_mapping:
        nn.init_dense(params, "map", config.element_dim(encoder), config.latent_dim,
                      rng)
    return params


def standardize_cloud(cloud: PointCloud, n_points: int) -> np.ndarray:
    """FPS down to n_points; clouds that are too small are padded by cycling
    the FPS-selected points (harmless under max pooling)."""
    sampled = fps(cloud, min(n_points, len(cloud)))
    pts = sampled.points
    if pts.shape[0] < n_points:
        reps = -(-n_points // pts.shape[0])
        pts = np.tile(pts, (reps, 1))[:n_points]
    return pts


def shared_pcn_forward(params: nn.ParameterSet, points: np.ndarray,
                       encoder: EncoderConfig) -> Tensor:
    """Global feature for one standardized cloud; components in (-1, 1)."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape != (encoder.points_per_cloud, 3):
        raise ValueError(
            f"expected ({encoder.points_per_cloud}, 3) points, got {points.shape}")
    h = Tensor(points)
    last = len(encoder.widths) - 1
    for i in range(last):
        h = nn.dense_forward(params, f"enc{i}", h).relu()
        g = h.max_over_rows()
        h = concat([h, g.expand_rows(points.shape[0])], axis=1)
    h = nn.dense_forward(params, f"enc{last}", h)
    return h.max_over_rows().tanh()


def build_element_reprs(clouds: Sequence[PointCloud],
                        latents: Sequence[np.ndarray],
                        params: nn.ParameterSet,
                        encoder: EncoderConfig,
                        config: AggregatorConfig) -> List[Tensor]:
    """Per-sweep element representations: global feature merged with latent."""
    if len(clouds) < 1:
        raise ValueError("need at least one sweep")
    if config.use_latents and len(clouds) != len(latents):
        raise ValueError(f"{len(clouds)} clouds vs {len(latents)} latents")
    reprs = []
    for i, cloud in enumerate(clouds):
        pts = standardize_cloud(cloud, encoder.points_per_cloud)
        g = shared_pcn_forward(params, pts, encoder)
        if not config.use_latents:
            reprs.append(g)
            continue
        z = Tensor(np.asarray(latents[i], dtype=np.float64))
        if z.shape[0] != config.latent_dim:
            raise ValueError(f"latent dim {z.shape[0]} != {config.latent_dim}")
        reprs.append(g * z if config.merge == "multiply" else concat([g, z]))
    return reprs


def aggregate(reprs: Sequence[Tensor], params: nn.ParameterSet,
              config: AggregatorConfig) -> Tensor:
    """Pool element representations symmetrically and map to a latent code.

    Rows are sorted canonically before pooling so the result is bitwise
    invariant to element order (avg pooling would otherwise differ in the
    last ulp across summation orders).
    """
    if len(reprs) < 1:
        raise ValueError("need at least one element")
    mat = stack_rows(list(reprs))
    order = np.lexsort(mat.data.T[::-1])
    mat = mat.take_rows(order)
    pooled = mat.max_over_rows() if config.pool == "max" else mat.mean_over_rows()
    if not config.use_mapping:
        return pooled
    return nn.dense_forward(params, "map", pooled.reshape(1, -1)).reshape(-1)


def forward_instance(params: nn.ParameterSet, clouds: Sequence[PointCloud],
                     latents: Sequence[np.ndarray], encoder: EncoderConfig,
                     config: AggregatorConfig) -> Tensor:
    return aggregate(build_element_reprs(clouds, latents, params, encoder, config),
                     params, config)


def mean_latent_baseline(latents: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of per-sweep latent codes."""
    if len(latents) < 1:
        raise ValueError("need at least one latent")
    return np.mean(np.asarray(latents, dtype=np.float64), axis=0)


@dataclass
class TrainingExample:
    """One stage-two supervision item: sweeps, their latents, and z_gt."""

    clouds: List[PointCloud]
    latents: List[np.ndarray]
    z_gt: np.ndarray


def train_stage_two(dataset: Sequence[TrainingExample], encoder: EncoderConfig,
                    config: AggregatorConfig, epochs: int = 20, lr: float = 1e-5,
                    seed: int = 0) -> Tuple[nn.ParameterSet, List[float]]:
    """Regress the aggregated code onto z_gt with MSE, batch of one instance
    per step (the model sees all B sweeps of an instance simultaneously)."""
    for ex in dataset:
        if ex.z_gt is None or (config.use_latents and not ex.latents):
            raise ValueError("every instance needs z_gt and per-sweep latents")
    params = init_aggregator(encoder, config, seed=seed)
    opt = nn.AdamState(lr=lr)
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]).generate_state(1)[0])
    history: List[float] = []
    for _ in range(epochs):
        losses = []
        for idx in order_rng.permutation(len(dataset)):
            ex = dataset[idx]
            params.zero_grad()
            pred = forward_instance(params, ex.clouds, ex.latents, encoder, config)
            loss = nn.mse(pred, ex.z_gt)
            backward(loss)
            nn.adam_step(params, opt)
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
    return params, history


def predict(instance, decoder: SdfDecoder, params: nn.ParameterSet,
            encoder: EncoderConfig, config: AggregatorConfig,
            per_sweep_latents: Optional[Sequence[np.ndarray]] = None,
            resolution: int = 64, infer_kwargs: Optional[dict] = None
            ) -> Tuple[TriangleMesh, np.ndarray]:
    """Full multi-sweep prediction: per-sweep latents (inferred if absent),
    element representations, aggregation, then mesh extraction.

    Returns (mesh, predicted latent code).
    """
    if per_sweep_latents is None:
        kw = infer_kwargs or {}
        per_sweep_latents = [infer_latent(decoder, sweep, **kw)
                             for sweep in instance.sweeps]
    z_hat = forward_instance(params, instance.sweeps, per_sweep_latents,
                             encoder, config).data
    return reconstruct(decoder, z_hat, resolution=resolution), z_hat


# ---------------------------------------------------------------------------
# Checkpoints: nn format plus a JSON sidecar with both configs; loading
# refuses a checkpoint whose recorded configs disagree with the expected ones.
# ---------------------------------------------------------------------------


def save_aggregator(params: nn.ParameterSet, encoder: EncoderConfig,
                    config: AggregatorConfig, path) -> None:
    nn.save_checkpoint(params, path)
    sidecar = {"encoder": asdict(encoder), "aggregator": asdict(config)}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))


def load_aggregator(path, expected_encoder: Optional[EncoderConfig] = None,
                    expected_config: Optional[AggregatorConfig] = None
                    ) -> Tuple[nn.ParameterSet, EncoderConfig, AggregatorConfig]:
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    encoder = EncoderConfig(widths=tuple(sidecar["encoder"]["widths"]),
                            points_per_cloud=sidecar["encoder"]["points_per_cloud"])
    config = AggregatorConfig(**sidecar["aggregator"])
    if expected_encoder is not None and encoder != expected_encoder:
        raise ValueError(f"encoder config mismatch: {encoder} != {expected_encoder}")
    if expected_config is not None and config != expected_config:
        raise ValueError(f"aggregator config mismatch: {config} != {expected_config}")
    return nn.load_checkpoint(path), encoder, config
