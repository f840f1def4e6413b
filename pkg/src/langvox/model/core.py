"""The full language-guided 2D/3D model and its parameter registry."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from ..numerics import Parameter, Tensor
from ..numerics import checkpoint
from .layers import Linear, Module
from .networks import Decoder2D, Decoder3D, Encoder2D, Encoder3D, Gate, Raster, TextQuery, VoxelInput

GROUPS = ("enc2d", "dec2d", "enc3d", "adapters", "tqm", "gate", "dec3d", "head")


@dataclass
class ModelConfig:
    dim: int = 32          # shared 2D / text embedding width
    dim_3d: int = 16       # 3D encoder width
    dec_dim: int = 32      # decoder feature width
    num_classes: int = 4   # segmentation head outputs
    heads: int = 1
    enc2d_channels: tuple = (8, 16)
    enc3d_hidden: int = 32
    enc3d_rounds: int = 2
    attention_pool: bool = True
    seed: int = 0


class LanguageGuidedModel(Module):
    """Encoders, decoders, adapters, text querying block, gate and segmentation head.

    Every parameter carries a stable dotted name (``tqm.w_q``,
    ``adapters.expand.w``, ``gate.beta`` ...) used by the checkpoint format.
    """

    def __init__(self, config: Optional[ModelConfig] = None, freeze_2d: bool = True):
        self.config = config = config or ModelConfig()
        rng = np.random.default_rng(config.seed)
        # fixed construction order keeps initialisation reproducible per seed
        self.enc2d = Encoder2D(config.dim, rng, tuple(config.enc2d_channels), config.attention_pool,
                               config.heads, frozen=freeze_2d)
        self.dec2d = Decoder2D(config.dim, config.dec_dim, rng)
        self.enc3d = Encoder3D(config.dim_3d, rng, hidden=config.enc3d_hidden, rounds=config.enc3d_rounds)
        self.expand = Linear(config.dim_3d, config.dim, "adapters.expand", rng, gain=1.0)
        self.reduce = Linear(config.dim, config.dim_3d, "adapters.reduce", rng, gain=1.0)
        self.tqm = TextQuery(config.dim, rng, heads=config.heads)
        self.gate = Gate()
        self.dec3d = Decoder3D(config.dim_3d, config.dec_dim, rng)
        self.head = Linear(config.dec_dim, config.num_classes, "head", rng, gain=1.0)

    # -- parameter registry --------------------------------------------------
    def named_parameters(self) -> Dict[str, Parameter]:
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def group(self, *names: str) -> List[Parameter]:
        return [p for p in self.parameters() if p.name.split(".")[0] in names]

    # -- forward pieces --------------------------------------------------------
    def encode_2d(self, color: Optional[np.ndarray] = None, features: Optional[np.ndarray] = None) -> Raster:
        """Frozen 2D features of ``color``, or precomputed ``features`` (h x w x d) passed through verbatim."""
        if features is not None:
            h, w, d = features.shape
            return Raster(Tensor(features.reshape(h * w, d)), h, w)
        return self.enc2d(color)

    def decode_2d(self, h2d: Raster) -> Raster:
        return self.dec2d(h2d)

    def predict_depth(self, z2d: Raster) -> Tensor:
        return self.dec2d.depth(z2d)

    def encode_3d(self, voxels: VoxelInput) -> Tensor:
        return self.enc3d(voxels)

    def expand_3d(self, h3d: Tensor) -> Tensor:
        return self.expand(h3d)

    def text_query(self, h3d_expanded: Tensor, text: Tensor) -> Tensor:
        return self.tqm(h3d_expanded, text)

    def aggregate(self, h3d: Tensor, h3d_text: Tensor) -> Tensor:
        return h3d * self.gate.alpha + self.reduce(h3d_text) * self.gate.beta

    def decode_3d(self, h_aggr: Tensor) -> Tensor:
        return self.dec3d(h_aggr)

    def segment(self, z3d: Tensor) -> Tensor:
        return self.head(z3d)

    def forward_3d(self, voxels: VoxelInput, text: Tensor) -> Dict[str, Tensor]:
        """Whole 3D path; returns every intermediate by name."""
        h3d = self.encode_3d(voxels)
        h3d_hat = self.expand_3d(h3d)
        h_text = self.text_query(h3d_hat, text)
        h_aggr = self.aggregate(h3d, h_text)
        z3d = self.decode_3d(h_aggr)
        return {"h3d": h3d, "h3d_hat": h3d_hat, "h_text": h_text, "h_aggr": h_aggr, "z3d": z3d}

    # -- persistence -------------------------------------------------------------
    def records(self) -> List[checkpoint.Record]:
        return [checkpoint.Record(name, p.data, p.frozen) for name, p in self.named_parameters().items()]

    def load_records(self, records: Dict[str, checkpoint.Record], strict: bool = True,
                     skip_groups=()) -> None:
        params = self.named_parameters()
        for name, p in params.items():
            if name.split(".")[0] in skip_groups:
                continue
            if name not in records:
                if strict:
                    raise checkpoint.FormatError(f"checkpoint lacks parameter {name}")
                continue
            rec = records[name]
            if rec.data.shape != p.shape:
                raise checkpoint.FormatError(f"{name}: shape {rec.data.shape} != {p.shape}")
            p.data = rec.data.copy()
            p.freeze(rec.frozen)

    def config_dict(self) -> dict:
        return asdict(self.config)
