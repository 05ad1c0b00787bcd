"""SDF auto-decoder: architecture, joint stage-one training of decoder and
per-shape latent codes, SDF sample generation from watertight meshes, and
MAP latent inference for a single sweep against a frozen decoder."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .autodiff import Tensor, backward, concat
from .geometry import PointCloud, estimate_normals, fps
from .mesh import SdfGrid, TriangleMesh, marching_cubes, mesh_sdf, sample_surface


@dataclass(frozen=True)
class DecoderConfig:
    latent_dim: int = 64
    hidden: int = 128
    n_layers: int = 4              # hidden dense layers before the linear head
    skip_index: int = 2            # layer whose input re-injects (z, x)
    clamp_delta: float = 0.1
    inv_sigma_sq: float = 1e-4     # latent-norm regularization weight

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError("n_layers must be >= 2")
        if not 0 < self.skip_index < self.n_layers:
            raise ValueError("skip_index must fall strictly inside the layer stack")
        if self.clamp_delta <= 0 or self.inv_sigma_sq < 0:
            raise ValueError("invalid clamp_delta / inv_sigma_sq")


@dataclass(frozen=True)
class SdfSampleSet:
    """(query, signed distance) supervision pairs for one shape."""

    queries: np.ndarray  # (N, 3)
    sdf: np.ndarray      # (N,)
    n_surface_derived: int
    n_free_space: int

    def __post_init__(self):
        q = np.asarray(self.queries, dtype=np.float64).reshape(-1, 3)
        s = np.asarray(self.sdf, dtype=np.float64).reshape(-1)
        if q.shape[0] != s.shape[0]:
            raise ValueError("query/sdf count mismatch")
        if q.size and not (np.isfinite(q).all() and np.isfinite(s).all()):
            raise ValueError("non-finite samples")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "sdf", s)

    def __len__(self) -> int:
        return self.queries.shape[0]


class SdfDecoder:
    """DeepSDF-style MLP mapping (latent, coordinate) -> signed distance.

    ReLU between hidden layers, raw linear output (clamping happens in the
    loss only), and one skip connection that re-injects the input block.
    """

    def __init__(self, config: DecoderConfig, seed: int = 0,
                 params: Optional[nn.ParameterSet] = None):
        self.config = config
        in_dim = config.latent_dim + 3
        if params is not None:
            self.params = params
        else:
            rng = np.random.default_rng(seed)
            self.params = nn.ParameterSet()
            width_in = in_dim
            for i in range(config.n_layers):
                if i == config.skip_index:
                    width_in += in_dim
                nn.init_dense(self.params, f"layer{i}", width_in, config.hidden, rng)
                width_in = config.hidden
            nn.init_dense(self.params, "head", config.hidden, 1, rng)

    def forward(self, z: Tensor, x: np.ndarray) -> Tensor:
        """Differentiable forward. z: (L,) or (N, L) tensor; x: (N, 3)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        if z.data.ndim == 1:
            if z.shape[0] != self.config.latent_dim:
                raise ValueError(f"latent dim {z.shape[0]} != {self.config.latent_dim}")
            z = z.expand_rows(n)
        inp = concat([z, Tensor(x)], axis=1)
        h = inp
        for i in range(self.config.n_layers):
            if i == self.config.skip_index:
                h = concat([h, inp], axis=1)
            h = nn.dense_forward(self.params, f"layer{i}", h).relu()
        return nn.dense_forward(self.params, "head", h).reshape(-1)

    def eval_sdf(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Fast numpy-only forward for frozen parameters (no tape)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        inp = np.concatenate([np.broadcast_to(z, (x.shape[0], z.shape[0])), x], axis=1)
        h = inp
        for i in range(self.config.n_layers):
            if i == self.config.skip_index:
                h = np.concatenate([h, inp], axis=1)
            W = self.params[f"layer{i}.W"].data
            b = self.params[f"layer{i}.b"].data
            h = np.maximum(h @ W + b, 0.0)
        return (h @ self.params["head.W"].data + self.params["head.b"].data).reshape(-1)


def decode_sdf(decoder: SdfDecoder, z: np.ndarray, x) -> np.ndarray:
    """SDF estimates for query point(s) x under latent code z."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != decoder.config.latent_dim:
        raise ValueError(f"latent dim {z.shape[0]} != {decoder.config.latent_dim}")
    x_arr = np.asarray(x, dtype=np.float64)
    out = decoder.eval_sdf(z, x_arr.reshape(-1, 3))
    return float(out[0]) if x_arr.ndim == 1 else out


def generate_sdf_samples(mesh: TriangleMesh, n_surface: int, n_uniform: int,
                         offsets: Sequence[float] = (0.025, 0.05),
                         seed: int = 0,
                         extent: Tuple[float, float] = (-1.1, 1.1)) -> SdfSampleSet:
    """Sample SDF supervision from a watertight, normalized mesh.

    Surface points are displaced by +/- each offset along the face normal;
    every target (including the displaced ones) comes from the mesh_sdf
    oracle. n_uniform extra queries are drawn uniformly in the grid extent.
    """
    rng = np.random.default_rng(seed)
    surf, face_idx = sample_surface(mesh, n_surface, seed=seed, return_face_index=True)
    corners = mesh.triangle_corners()[face_idx]
    normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    blocks = [surf.points]
    for o in offsets:
        blocks.append(surf.points + o * normals)
        blocks.append(surf.points - o * normals)
    n_surface_derived = sum(b.shape[0] for b in blocks)
    if n_uniform > 0:
        blocks.append(rng.uniform(extent[0], extent[1], size=(n_uniform, 3)))
    queries = np.clip(np.concatenate(blocks, axis=0), extent[0], extent[1])
    sdf = mesh_sdf(mesh, queries)
    return SdfSampleSet(queries, sdf, n_surface_derived, max(n_uniform, 0))


def train_stage_one(sample_sets: Sequence[SdfSampleSet], config: DecoderConfig,
                    epochs: int = 250, lr: float = 1e-3, seed: int = 0,
                    shape_ids: Optional[Sequence[str]] = None,
                    batch_size: Optional[int] = None,
                    ) -> Tuple[SdfDecoder, Dict[str, np.ndarray], List[float]]:
    """Jointly optimize decoder weights and one latent code per shape.

    Per shape and epoch, one Adam step on
    mean clamped-L1 + (inv_sigma_sq / K) * ||z||^2 (the per-point-mean form
    of the joint objective), over the full sample set or a seeded random
    subset of batch_size. Returns (decoder, codebook, epoch mean losses).
    """
    if not sample_sets:
        raise ValueError("empty dataset")
    if any(len(s) == 0 for s in sample_sets):
        raise ValueError("sample set with zero samples")
    if shape_ids is None:
        shape_ids = [f"shape_{j:04d}" for j in range(len(sample_sets))]

    decoder = SdfDecoder(config, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]).generate_state(1)[0])
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, 3]).generate_state(1)[0])
    latents = nn.ParameterSet()
    for sid in shape_ids:
        latents.add(sid, rng.normal(0.0, 0.01, size=config.latent_dim))

    opt_dec = nn.AdamState(lr=lr)
    opt_lat = nn.AdamState(lr=lr)
    history: List[float] = []
    for _ in range(epochs):
        epoch_losses = []
        for sid, samples in zip(shape_ids, sample_sets):
            decoder.params.zero_grad()
            latents.zero_grad()
            z = latents[sid]
            if batch_size is not None and len(samples) > batch_size:
                pick = batch_rng.choice(len(samples), size=batch_size, replace=False)
                queries, sdf = samples.queries[pick], samples.sdf[pick]
            else:
                queries, sdf = samples.queries, samples.sdf
            pred = decoder.forward(z, queries)
            data_loss = nn.clamped_l1_loss(pred, sdf, config.clamp_delta)
            reg = (config.inv_sigma_sq / queries.shape[0]) * z.square().sum()
            loss = data_loss + reg
            backward(loss)
            nn.adam_step(decoder.params, opt_dec)
            nn.adam_step(latents, opt_lat)
            epoch_losses.append(float(data_loss.data))
        history.append(float(np.mean(epoch_losses)))
    codebook = {sid: latents[sid].data.copy() for sid in shape_ids}
    return decoder, codebook, history


def infer_latent(decoder: SdfDecoder, sweep: PointCloud, iters: int = 400,
                 lr: float = 5e-3, seed: int = 0,
                 offsets: Sequence[float] = (0.025, 0.05),
                 normals_k: int = 10, max_points: Optional[int] = 256,
                 inv_sigma_sq: Optional[float] = None) -> np.ndarray:
    """MAP estimate of the latent code for one sweep with a frozen decoder.

    Builds querying points at +/- offset along sensor-oriented normals
    (targets +/- offset) plus the raw surface points (target 0), then runs
    Adam on the latent only; the learning rate is halved every 100 iters.
    """
    cfg = decoder.config
    queries, targets = _sweep_queries(sweep, offsets, normals_k, max_points)

    reg_weight = cfg.inv_sigma_sq if inv_sigma_sq is None else inv_sigma_sq
    rng = np.random.default_rng(seed)
    z_params = nn.ParameterSet()
    z = z_params.add("latent", rng.normal(0.0, 0.01, size=cfg.latent_dim))
    opt = nn.AdamState(lr=lr)
    for it in range(iters):
        z_params.zero_grad()
        decoder.params.zero_grad()
        pred = decoder.forward(z, queries)
        loss = nn.clamped_l1_loss(pred, targets, cfg.clamp_delta) \
            + (reg_weight / len(targets)) * z.square().sum()
        backward(loss)
        nn.adam_step(z_params, opt, lr=lr * 0.5 ** (it // 100))
    decoder.params.zero_grad()
    return z.data.copy()


def _sweep_queries(sweep: PointCloud, offsets: Sequence[float], normals_k: int,
                   max_points: Optional[int]):
    if len(sweep) == 0:
        raise ValueError("empty sweep")
    if sweep.sensor_origin is None:
        raise ValueError("sweep needs a sensor origin for normal orientation")
    if max_points is not None and len(sweep) > max_points:
        sweep = fps(sweep, max_points)
    normals = estimate_normals(sweep, k=min(normals_k, len(sweep) - 1))
    queries = [sweep.points]
    targets = [np.zeros(len(sweep))]
    for o in offsets:
        queries += [sweep.points + o * normals, sweep.points - o * normals]
        targets += [np.full(len(sweep), o), np.full(len(sweep), -o)]
    return np.concatenate(queries, axis=0), np.concatenate(targets)


def infer_latents_batch(decoder: SdfDecoder, sweeps: Sequence[PointCloud],
                        iters: int = 300, lr: float = 5e-3, seed: int = 0,
                        offsets: Sequence[float] = (0.025, 0.05),
                        normals_k: int = 10, max_points: Optional[int] = 256
                        ) -> List[np.ndarray]:
    """Optimize the latent codes of several independent sweeps jointly.

    Each sweep keeps its own code; the losses are independent, so this is a
    vectorized equivalent of per-sweep MAP inference (one shared Adam run).
    """
    cfg = decoder.config
    blocks = [_sweep_queries(s, offsets, normals_k, max_points) for s in sweeps]
    queries = np.concatenate([q for q, _ in blocks], axis=0)
    targets = np.concatenate([t for _, t in blocks])
    row_idx = np.concatenate([np.full(q.shape[0], i, dtype=np.intp)
                              for i, (q, _) in enumerate(blocks)])
    rng = np.random.default_rng(seed)
    z_params = nn.ParameterSet()
    Z = z_params.add("latents", rng.normal(0.0, 0.01,
                                           size=(len(sweeps), cfg.latent_dim)))
    opt = nn.AdamState(lr=lr)
    for it in range(iters):
        z_params.zero_grad()
        decoder.params.zero_grad()
        pred = decoder.forward(Z.take_rows(row_idx), queries)
        loss = nn.clamped_l1_loss(pred, targets, cfg.clamp_delta) \
            + (cfg.inv_sigma_sq / targets.shape[0]) * Z.square().sum()
        backward(loss)
        nn.adam_step(z_params, opt, lr=lr * 0.5 ** (it // 100))
    decoder.params.zero_grad()
    return [Z.data[i].copy() for i in range(len(sweeps))]


def infer_latent_stacked(decoder: SdfDecoder, sweeps: Sequence[PointCloud],
                         iters: int = 300, lr: float = 5e-3, seed: int = 0,
                         offsets: Sequence[float] = (0.025, 0.05),
                         normals_k: int = 10,
                         max_points: Optional[int] = 256) -> np.ndarray:
    """Single-shot inference on stacked multi-sweep data: one latent code fit
    to the union of all sweeps' querying points. Normals are estimated per
    sweep (each sweep knows its own sensor origin) before stacking.
    """
    cfg = decoder.config
    per = None if max_points is None else max(normals_k + 2,
                                              max_points // len(sweeps))
    blocks = [_sweep_queries(s, offsets, normals_k, per) for s in sweeps]
    queries = np.concatenate([q for q, _ in blocks], axis=0)
    targets = np.concatenate([t for _, t in blocks])
    rng = np.random.default_rng(seed)
    z_params = nn.ParameterSet()
    z = z_params.add("latent", rng.normal(0.0, 0.01, size=cfg.latent_dim))
    opt = nn.AdamState(lr=lr)
    for it in range(iters):
        z_params.zero_grad()
        decoder.params.zero_grad()
        pred = decoder.forward(z, queries)
        loss = nn.clamped_l1_loss(pred, targets, cfg.clamp_delta) \
            + (cfg.inv_sigma_sq / targets.shape[0]) * z.square().sum()
        backward(loss)
        nn.adam_step(z_params, opt, lr=lr * 0.5 ** (it // 100))
    decoder.params.zero_grad()
    return z.data.copy()


def reconstruct(decoder: SdfDecoder, z: np.ndarray, resolution: int = 64,
                extent: Tuple[float, float] = (-1.1, 1.1),
                batch: int = 65536) -> TriangleMesh:
    """Decode z on a regular grid and extract the zero isosurface."""
    grid = decoder_grid(decoder, z, resolution, extent, batch)
    return marching_cubes(grid, iso=0.0)


def decoder_grid(decoder: SdfDecoder, z: np.ndarray, resolution: int = 64,
                 extent: Tuple[float, float] = (-1.1, 1.1),
                 batch: int = 65536) -> SdfGrid:
    axis = np.linspace(extent[0], extent[1], resolution)
    zz, yy, xx = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    values = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], batch):
        values[s : s + batch] = decoder.eval_sdf(z, pts[s : s + batch])
    return SdfGrid(resolution, extent, values)


# ---------------------------------------------------------------------------
# Persistence: decoder checkpoint + config sidecar; latent codes as single-
# tensor checkpoints; codebooks as one file per shape plus a JSON index.
# ---------------------------------------------------------------------------


def save_decoder(decoder: SdfDecoder, path) -> None:
    nn.save_checkpoint(decoder.params, path)
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps(decoder.config.__dict__, sort_keys=True, indent=1))


def load_decoder(path) -> SdfDecoder:
    cfg = DecoderConfig(**json.loads(Path(str(path) + ".json").read_text()))
    return SdfDecoder(cfg, params=nn.load_checkpoint(path))


def save_latent(code: np.ndarray, path) -> None:
    params = nn.ParameterSet()
    params.add("latent", np.asarray(code, dtype=np.float64))
    nn.save_checkpoint(params, path)


def load_latent(path) -> np.ndarray:
    return nn.load_checkpoint(path)["latent"].data


def save_codebook(codebook: Dict[str, np.ndarray], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for sid, code in sorted(codebook.items()):
        fname = f"{sid}.bin"
        save_latent(code, directory / fname)
        index[sid] = fname
    (directory / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1))


def load_codebook(directory) -> Dict[str, np.ndarray]:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    return {sid: load_latent(directory / fname) for sid, fname in index.items()}
