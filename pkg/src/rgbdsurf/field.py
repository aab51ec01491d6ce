"""Learnable scene representation.

A stack of dense voxel feature lattices (trilinearly interpolated) feeds an SDF
decoder; colour and pseudo-colour semantic heads read the SDF decoder's
geometric feature plus an encoded view direction. A separate, deliberately
small "pre-rendering" MLP maps an encoded position to a non-negative density
used only to guide sampling.

Gradients come from torch autograd; everything runs in float64 by default.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch
from torch import nn

CKPT_MAGIC = b"presem-ckpt-v1\n"

DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass
class FieldConfig:
    bounds_min: tuple = (-1.0, -1.0, -1.0)
    bounds_max: tuple = (1.0, 1.0, 1.0)
    voxel_sizes: tuple = (0.03, 0.06, 0.24, 0.96)
    feat_dim: int = 4
    geo_dim: int = 16
    sdf_hidden: int = 64
    sdf_layers: int = 2
    rgb_hidden: int = 64
    rgb_layers: int = 2
    pr_hidden: int = 32
    pr_layers: int = 2
    sem_hidden: int = 32
    pe_octaves: int = 6
    dir_octaves: int = 4
    encode_include_raw: bool = True
    # analytic initial SDF: "inverted_sphere" (room seen from inside), "sphere" or "none"
    prior: str = "inverted_sphere"
    prior_radius: float | None = None
    inv_s_init: float = 200.0
    feature_init_std: float = 1e-2
    dtype: str = "float64"
    seed: int = 0


class FieldError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def _grid_dims(extent: np.ndarray, voxel: float) -> tuple:
    return tuple(int(math.ceil(e / voxel - 1e-9)) + 1 for e in extent)


class MultiResFeatureGrid(nn.Module):
    """Dense feature lattices, one per voxel size (finest first)."""

    def __init__(self, bounds_min, bounds_max, voxel_sizes, feat_dim=4, init_std=1e-2,
                 generator=None, dtype=torch.float64):
        super().__init__()
        voxel_sizes = [float(v) for v in voxel_sizes]
        if any(b <= a for a, b in zip(voxel_sizes, voxel_sizes[1:])):
            raise ValueError("voxel sizes must be strictly increasing")
        self.lo = np.asarray(bounds_min, dtype=np.float64)
        self.hi = np.asarray(bounds_max, dtype=np.float64)
        if np.any(self.hi <= self.lo):
            raise ValueError("empty bounds")
        extent = self.hi - self.lo
        self.voxel_sizes = voxel_sizes
        self.feat_dim = feat_dim
        self.dims = [_grid_dims(extent, v) for v in voxel_sizes]
        # a level whose voxel exceeds the scene collapses to two nodes per axis
        self.collapsed = [bool(np.any(v > extent)) for v in voxel_sizes]
        self.features = nn.ParameterList()
        for d in self.dims:
            f = torch.randn(*d, feat_dim, generator=generator, dtype=dtype) * init_std
            self.features.append(nn.Parameter(f))
        self.register_buffer("_lo", torch.tensor(self.lo, dtype=dtype))

    @property
    def out_dim(self) -> int:
        return self.feat_dim * len(self.voxel_sizes)

    def node_positions(self, level: int) -> np.ndarray:
        d = self.dims[level]
        v = self.voxel_sizes[level]
        axes = [self.lo[i] + v * np.arange(d[i]) for i in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1)

    def inside(self, x: torch.Tensor) -> torch.Tensor:
        lo = torch.as_tensor(self.lo, dtype=x.dtype)
        hi = torch.as_tensor(self.hi, dtype=x.dtype)
        return ((x >= lo) & (x <= hi)).all(-1)

    def interpolate_level(self, x: torch.Tensor, level: int) -> torch.Tensor:
        feats = self.features[level]
        dims = self.dims[level]
        v = self.voxel_sizes[level]
        g = (x - self._lo.to(x.dtype)) / v
        upper = torch.tensor([d - 1 for d in dims], dtype=x.dtype)
        g = torch.minimum(torch.clamp(g, min=0.0), upper)
        i0 = torch.clamp(torch.floor(g).long(), max=torch.tensor([d - 2 for d in dims]))
        t = g - i0.to(x.dtype)
        nx, ny, nz = dims
        flat = feats.reshape(-1, feats.shape[-1])
        out = 0.0
        for corner in range(8):
            dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
            idx = ((i0[:, 0] + dx) * ny + (i0[:, 1] + dy)) * nz + (i0[:, 2] + dz)
            w = ((t[:, 0] if dx else 1 - t[:, 0])
                 * (t[:, 1] if dy else 1 - t[:, 1])
                 * (t[:, 2] if dz else 1 - t[:, 2]))
            out = out + w[:, None] * flat[idx]
        return out

    def forward(self, x: torch.Tensor):
        """Concatenated features (coarse-to-fine) and a mask of clamped points."""
        parts = [self.interpolate_level(x, lv) for lv in reversed(range(len(self.voxel_sizes)))]
        return torch.cat(parts, -1), ~self.inside(x)

    @torch.no_grad()
    def resample_from(self, other: "MultiResFeatureGrid") -> None:
        """Set every node of every level to ``other``'s same-level interpolant."""
        for lv in range(len(self.voxel_sizes)):
            pos = torch.as_tensor(self.node_positions(lv).reshape(-1, 3), dtype=self.features[lv].dtype)
            vals = other.interpolate_level(pos, lv)
            self.features[lv].copy_(vals.reshape(self.features[lv].shape))


def frequency_encoding(x: torch.Tensor, L: int, include_raw: bool = True) -> torch.Tensor:
    parts = [x] if include_raw else []
    for k in range(L):
        parts.append(torch.sin((2.0 ** k) * math.pi * x))
        parts.append(torch.cos((2.0 ** k) * math.pi * x))
    return torch.cat(parts, -1)


def _mlp(n_in, hidden, n_layers, n_out, act=None):
    layers = []
    d = n_in
    for _ in range(n_layers):
        layers += [nn.Linear(d, hidden), act() if act else nn.Softplus(beta=100)]
        d = hidden
    layers.append(nn.Linear(d, n_out))
    return nn.Sequential(*layers)


@dataclass
class FieldOutput:
    sdf: torch.Tensor
    color: torch.Tensor
    semantic_color: torch.Tensor
    geometric_feature: torch.Tensor
    clamped: torch.Tensor


class NeuralField(nn.Module):
    """Grids plus the four decoders and the learnable sharpness ``inv_s``."""

    def __init__(self, cfg: FieldConfig):
        super().__init__()
        self.cfg = cfg
        self.dtype = DTYPES[cfg.dtype]
        gen = torch.Generator().manual_seed(cfg.seed)
        torch.manual_seed(cfg.seed)
        self.grid = MultiResFeatureGrid(cfg.bounds_min, cfg.bounds_max, cfg.voxel_sizes,
                                        cfg.feat_dim, cfg.feature_init_std, gen, self.dtype)
        dir_dim = 3 * (1 if cfg.encode_include_raw else 0) + 6 * cfg.dir_octaves
        pe_dim = 3 * (1 if cfg.encode_include_raw else 0) + 6 * cfg.pe_octaves
        self.sdf_mlp = _mlp(self.grid.out_dim, cfg.sdf_hidden, cfg.sdf_layers, 1 + cfg.geo_dim)
        self.rgb_mlp = _mlp(cfg.geo_dim + dir_dim, cfg.rgb_hidden, cfg.rgb_layers, 3)
        self.sem_mlp = _mlp(cfg.geo_dim + dir_dim, cfg.sem_hidden, 1, 3)
        self.pr_mlp = _mlp(pe_dim, cfg.pr_hidden, cfg.pr_layers, 1)
        self.log_inv_s = nn.Parameter(torch.tensor(math.log(cfg.inv_s_init)))
        with torch.no_grad():
            last = self.sdf_mlp[-1]
            last.weight[:1].mul_(1e-3)
            last.bias[:1].zero_()
        self.to(self.dtype)
        lo = np.asarray(cfg.bounds_min, float)
        hi = np.asarray(cfg.bounds_max, float)
        self.center = torch.tensor((lo + hi) / 2, dtype=self.dtype)
        self.half_extent = torch.tensor((hi - lo) / 2, dtype=self.dtype)
        self.prior_radius = cfg.prior_radius if cfg.prior_radius is not None else float(np.min(hi - lo) / 2)

    # parameter groups ---------------------------------------------------
    def param_blocks(self) -> dict:
        """Named parameter blocks (used for optimiser groups and diagnostics)."""
        blocks = {f"grid.level{i}": p for i, p in enumerate(self.grid.features)}
        for name, mod in (("sdf_mlp", self.sdf_mlp), ("rgb_mlp", self.rgb_mlp),
                          ("pr_mlp", self.pr_mlp), ("sem_mlp", self.sem_mlp)):
            for pname, p in mod.named_parameters():
                blocks[f"{name}.{pname}"] = p
        blocks["log_inv_s"] = self.log_inv_s
        return blocks

    @staticmethod
    def group_of(block: str) -> str:
        if block.startswith("pr_mlp"):
            return "pr"
        if block.startswith("sem_mlp"):
            return "semantic"
        return "field"

    def check_finite(self) -> None:
        for name, p in self.param_blocks().items():
            if not torch.isfinite(p).all():
                raise FieldError(f"non-finite values in parameter block '{name}'")

    @property
    def inv_s(self) -> torch.Tensor:
        return torch.exp(self.log_inv_s)

    @property
    def bounds(self):
        return self.grid.lo, self.grid.hi

    @property
    def finest_voxel(self) -> float:
        return self.grid.voxel_sizes[0]

    # evaluation ---------------------------------------------------------
    def _t(self, x) -> torch.Tensor:
        return torch.as_tensor(x, dtype=self.dtype).reshape(-1, 3)

    def prior_sdf(self, x: torch.Tensor) -> torch.Tensor:
        kind = self.cfg.prior
        if kind == "none":
            return torch.zeros(x.shape[0], dtype=x.dtype)
        r = torch.linalg.norm(x - self.center, dim=-1)
        if kind == "sphere":
            return r - self.prior_radius
        if kind == "inverted_sphere":
            return self.prior_radius - r
        raise ValueError(f"unknown prior {kind!r}")

    def _sdf_head(self, x: torch.Tensor):
        feats, clamped = self.grid(x)
        h = self.sdf_mlp(feats)
        return h[:, 0] + self.prior_sdf(x), h[:, 1:], clamped

    def sdf(self, x) -> torch.Tensor:
        return self._sdf_head(self._t(x))[0]

    def decode(self, x, view_dir) -> FieldOutput:
        x = self._t(x)
        d = torch.as_tensor(view_dir, dtype=self.dtype).reshape(-1, 3).expand(x.shape[0], 3)
        sdf, geo, clamped = self._sdf_head(x)
        enc_d = frequency_encoding(d, self.cfg.dir_octaves, self.cfg.encode_include_raw)
        h = torch.cat([geo, enc_d], -1)
        return FieldOutput(sdf, torch.sigmoid(self.rgb_mlp(h)), torch.sigmoid(self.sem_mlp(h)), geo, clamped)

    def normalized(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.center) / self.half_extent

    def pr_density(self, x) -> torch.Tensor:
        x = self._t(x)
        enc = frequency_encoding(self.normalized(x), self.cfg.pe_octaves, self.cfg.encode_include_raw)
        return nn.functional.softplus(self.pr_mlp(enc)[:, 0])


# module-level operations --------------------------------------------------

def interpolate(grid: MultiResFeatureGrid, x):
    """Trilinear features at ``x`` (concatenated coarse-to-fine) and a clamp flag per point."""
    xt = torch.as_tensor(np.asarray(x, dtype=np.float64).reshape(-1, 3), dtype=grid.features[0].dtype)
    with torch.no_grad():
        f, clamped = grid(xt)
    return f.numpy(), clamped.numpy()


def pr_density(field: NeuralField, x):
    with torch.no_grad():
        return field.pr_density(x).numpy()


def decode(field: NeuralField, x, view_dir) -> FieldOutput:
    field.check_finite()
    with torch.no_grad():
        return field.decode(x, view_dir)


def sdf_gradient(field, x, h: float | None = None, return_flags: bool = False):
    """Central-difference gradient of ``field.sdf``.

    Differentiable with respect to field parameters. Axes whose stencil would
    leave the bounds fall back to a one-sided difference and are flagged.
    ``field`` only needs ``sdf(x)``, ``bounds`` and ``finest_voxel``.
    """
    if h is None:
        h = 0.5 * field.finest_voxel
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x, dtype=np.float64).reshape(-1, 3))
    x = x.reshape(-1, 3)
    lo, hi = (torch.as_tensor(b, dtype=x.dtype) for b in field.bounds)
    n = x.shape[0]
    eye = torch.eye(3, dtype=x.dtype) * h
    plus = torch.minimum(x[:, None, :] + eye, hi)  # (n, 3, 3)
    minus = torch.maximum(x[:, None, :] - eye, lo)
    stencil = torch.cat([plus.reshape(-1, 3), minus.reshape(-1, 3)], 0)
    vals = field.sdf(stencil)
    fp = vals[: 3 * n].reshape(n, 3)
    fm = vals[3 * n:].reshape(n, 3)
    span = (torch.diagonal(plus, dim1=1, dim2=2) - torch.diagonal(minus, dim1=1, dim2=2))
    flags = span < 2 * h * (1 - 1e-9)
    grad = (fp - fm) / torch.clamp(span, min=1e-12)
    if return_flags:
        return grad, flags.any(-1)
    return grad


# checkpoints ----------------------------------------------------------------

def save_checkpoint(path, field: NeuralField, meta: dict | None = None) -> None:
    """Write ``presem-ckpt-v1``: magic, u64 header length, JSON header, raw little-endian arrays."""
    arrays = {name: p.detach().cpu().numpy() for name, p in field.param_blocks().items()}
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        # ascontiguousarray would promote 0-d arrays to 1-d
        a = np.array(arrays[name], order="C", copy=True)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset})
        b = a.tobytes()
        blobs.append(b)
        offset += len(b)
    header = {"config": asdict(field.cfg), "arrays": entries, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Returns ``(field, meta)``; malformed files raise :class:`CheckpointError`."""
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: not a presem-ckpt-v1 checkpoint")
    pos = len(CKPT_MAGIC)
    try:
        (hlen,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        header = json.loads(data[pos: pos + hlen])
        pos += hlen
        cfg_d = header["config"]
        for k in ("bounds_min", "bounds_max", "voxel_sizes"):
            cfg_d[k] = tuple(cfg_d[k])
        field = NeuralField(FieldConfig(**cfg_d))
        entries = header["arrays"]
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    blocks = field.param_blocks()
    missing = set(blocks) - {e["name"] for e in entries}
    if missing:
        raise CheckpointError(f"{path}: missing parameter block(s) {', '.join(sorted(missing))}")
    with torch.no_grad():
        for e in entries:
            if e["name"] not in blocks:
                raise CheckpointError(f"{path}: unknown parameter block '{e['name']}'")
            dt = np.dtype(e["dtype"])
            count = int(np.prod(e["shape"])) if e["shape"] else 1
            try:
                a = np.frombuffer(data, dtype=dt, count=count, offset=pos + e["offset"]).reshape(e["shape"])
            except ValueError as exc:
                raise CheckpointError(f"{path}: truncated data for '{e['name']}'") from exc
            p = blocks[e["name"]]
            if tuple(p.shape) != tuple(a.shape):
                raise CheckpointError(f"{path}: shape mismatch for '{e['name']}'")
            p.copy_(torch.from_numpy(a.astype(a.dtype.newbyteorder("="))))
    return field, header["meta"]
