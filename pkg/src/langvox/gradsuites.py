"""Registered finite-difference suites, plus the small pre-training pair they share."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .dataset import PairSample, make_pair
from .geometry import DepthFrame, Intrinsics, Pose
from .losses import (
    PseudoLabels,
    auxiliary_loss,
    decoder_contrastive,
    depth_loss,
    pixel_voxel_contrastive,
    pretrain_total,
    score_map,
)
from .model import LanguageGuidedModel, ModelConfig, TextQuery, voxel_input
from .numerics import (
    GradCheckReport,
    Parameter,
    Tensor,
    batch_norm,
    conv2d,
    exp,
    fd_check,
    l2_normalize,
    log,
    log_softmax,
    matmul,
    softmax,
    sqrt,
    tsum,
    upsample_bilinear,
)

TOY_SIZE = 64          # 64 x 64 image -> 8 x 8 encoder raster
TOY_VOXELS = 6


@dataclass
class ToyPair:
    model: LanguageGuidedModel
    sample: PairSample
    text: Tensor

    def objective(self) -> Tensor:
        """``L_e + L_d + L_depth`` on the single pair."""
        m, s = self.model, self.sample
        h2d = m.encode_2d(s.color)
        z2d = m.decode_2d(h2d)
        out = m.forward_3d(voxel_input(s.grid), self.text)
        return pretrain_total({
            "encoder": pixel_voxel_contrastive(h2d.rows, out["h3d_hat"], s.pairs),
            "decoder": decoder_contrastive(z2d.rows, out["z3d"], s.decoder_pairs),
            "depth": depth_loss(m.predict_depth(z2d), s.depth),
        })

    def trainable(self) -> List[Parameter]:
        return [p for p in self.model.parameters() if not p.frozen and not p.name.startswith("head.")]


def toy_pair(seed: int = 0, width: int = 4) -> ToyPair:
    """Smooth random depth, six back-projected pixels as six voxels, a tiny model."""
    rng = np.random.default_rng(seed)
    n = TOY_SIZE
    intr = Intrinsics.from_params(64.0, 64.0, (n - 1) / 2, (n - 1) / 2, n, n)
    yy, xx = np.mgrid[0:n, 0:n] / n
    depth = 2.0 + 0.3 * np.sin(3 * xx + rng.uniform(0, 3)) * np.cos(2 * yy + rng.uniform(0, 3))
    color = rng.uniform(0, 1, (n, n, 3))
    cells = rng.choice(64, TOY_VOXELS, replace=False)
    keep = np.zeros((n, n), dtype=bool)
    for c in cells:
        r, q = divmod(int(c), 8)
        keep[8 * r + rng.integers(1, 7), 8 * q + rng.integers(1, 7)] = True
    # only the chosen pixels carry depth for the cloud; the full map supervises the depth head
    sparse_depth = DepthFrame(np.where(keep, depth, 0.0))
    sample = make_pair(0, color, sparse_depth, Pose.identity(), intr, voxel_size=0.05)
    sample.depth = DepthFrame(depth)
    cfg = ModelConfig(dim=width, dim_3d=width, dec_dim=width, num_classes=3, enc2d_channels=(width, width),
                      enc3d_hidden=width, seed=seed)
    model = LanguageGuidedModel(cfg)
    # move off the identity gate so the text branch carries gradient too
    model.gate.alpha.data[:] = 0.8
    model.gate.beta.data[:] = 0.5
    text = l2_normalize(Tensor(rng.standard_normal((3, width))), axis=1)
    return ToyPair(model, sample, text)


def _suite_pretrain(seed: int) -> GradCheckReport:
    toy = toy_pair(seed)
    return fd_check(toy.objective, toy.trainable())


def _suite_primitives(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    a = Parameter(rng.uniform(0.5, 2.0, (3, 4)), name="a")
    b = Parameter(rng.standard_normal((4, 2)), name="b")

    def f():
        x = matmul(log(a) * sqrt(a) + exp(a * 0.3) / a, b)
        return tsum(softmax(x, axis=1) * log_softmax(x * 2.0, axis=0))

    return fd_check(f, [a, b])


def _suite_batch_norm(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = Parameter(rng.standard_normal((6, 3)), name="x")
    g = Parameter(rng.uniform(0.5, 1.5, 3), name="gamma")
    b = Parameter(rng.standard_normal(3), name="beta")
    w = Tensor(rng.standard_normal((6, 3)))
    return fd_check(lambda: tsum(batch_norm(x, g, b) * w), [x, g, b])


def _suite_conv(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = Parameter(rng.standard_normal((2, 6, 6)), name="x")
    w = Parameter(rng.standard_normal((3, 2, 3, 3)), name="weight")
    bias = Parameter(rng.standard_normal(3), name="bias")
    probe = Tensor(rng.standard_normal((3, 6, 6)))
    return fd_check(lambda: tsum(upsample_bilinear(conv2d(x, w, bias, stride=2, padding=1), 2) * probe),
                    [x, w, bias])


def _suite_text_query(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    tqm = TextQuery(4, rng, heads=2)
    h = Tensor(rng.standard_normal((5, 4)))
    t = Tensor(rng.standard_normal((3, 4)))
    probe = Tensor(rng.standard_normal((5, 4)))
    return fd_check(lambda: tsum(tqm(h, t) * probe), tqm.parameters())


def _suite_contrastive(seed: int) -> GradCheckReport:
    from .geometry import CorrespondenceSet
    rng = np.random.default_rng(seed)
    a = Parameter(rng.standard_normal((10, 5)), name="feat2d")
    b = Parameter(rng.standard_normal((7, 5)), name="feat3d")
    pairs = CorrespondenceSet(np.stack([rng.choice(10, 6, replace=False), rng.choice(7, 6, replace=False)], 1), 2, 5)
    return fd_check(lambda: pixel_voxel_contrastive(a, b, pairs), [a, b])


def _suite_auxiliary(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    h = Parameter(rng.standard_normal((6, 4)), name="h3d")
    t = Parameter(rng.standard_normal((3, 4)), name="text")
    pseudo = PseudoLabels(np.array([0, 2, -1, 1, 1, -1]), np.array([True, True, False, True, True, False]))
    return fd_check(lambda: auxiliary_loss(score_map(h, t), pseudo, 0.5), [h, t])


def _suite_depth(seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    pred = Parameter(rng.uniform(1, 3, (4, 4)), name="depth")
    gt = DepthFrame(np.where(rng.uniform(size=(8, 8)) < 0.3, 0.0, rng.uniform(1, 3, (8, 8))))
    return fd_check(lambda: depth_loss(pred, gt), [pred])


SUITES: Dict[str, Callable[[int], GradCheckReport]] = {
    "primitives": _suite_primitives,
    "batch_norm": _suite_batch_norm,
    "conv": _suite_conv,
    "text_query": _suite_text_query,
    "contrastive": _suite_contrastive,
    "auxiliary": _suite_auxiliary,
    "depth": _suite_depth,
    "pretrain": _suite_pretrain,
}


def run_suites(scope: str = "all", seed: int = 0) -> Dict[str, GradCheckReport]:
    names = list(SUITES) if scope == "all" else [scope]
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite {unknown[0]!r}; available: {', '.join(SUITES)}")
    return {name: SUITES[name](seed) for name in names}
