"""Pre-training, fine-tuning, evaluation and resumable checkpoints."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..dataset import PairSample
from ..losses import (
    EmptySetError,
    PseudoLabels,
    assign_pseudo_labels,
    auxiliary_loss,
    decoder_contrastive,
    depth_loss,
    pixel_voxel_contrastive,
    pretrain_total,
    score_map,
)
from ..model import LanguageGuidedModel, ModelConfig, Raster, VoxelInput, voxel_input
from ..numerics import (LrSchedule, NumericalError, Parameter, SgdMomentum, StateError, Tensor, cross_entropy, schedule_lr,
                        take)
from ..numerics import checkpoint
from ..numerics.functional import DegenerateError
from ..textside import LabelError, LabelSet, MockTextEncoder, TextBank, load_frozen_embeddings
from .config import ConfigError, TrainConfig
from .metrics import MetricsSink, SegmentationScores, confusion_matrix, segmentation_scores

PRETRAIN_GROUPS = ("dec2d", "enc3d", "adapters", "tqm", "gate", "dec3d")
FINETUNE_GROUPS = ("enc3d", "adapters", "tqm", "gate", "dec3d", "head")
META = "meta.json"
VELOCITY = "optim.velocity."
log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """A loss term or gradient went non-finite."""

    def __init__(self, step: int, term: str, detail: str = ""):
        super().__init__(f"non-finite value at step {step} in {term}" + (f": {detail}" if detail else ""))
        self.step = step
        self.term = term


def no_decay(name: str) -> bool:
    return name.startswith(("gate.", "prompt.")) or name.endswith((".gamma", ".beta"))


def model_config(cfg: TrainConfig, num_classes: int) -> ModelConfig:
    return ModelConfig(dim=cfg.model_dim, dim_3d=cfg.model_dim_3d, dec_dim=cfg.model_dec_dim,
                       num_classes=num_classes, heads=cfg.model_heads, enc3d_hidden=cfg.model_enc3d_hidden,
                       enc3d_rounds=cfg.model_enc3d_rounds, attention_pool=cfg.model_attention_pool, seed=cfg.seed)


def build_textbank(cfg: TrainConfig, classes: Sequence[str], mode: Optional[str] = None) -> TextBank:
    labels = LabelSet(classes)
    encoder = MockTextEncoder(out_dim=cfg.model_dim, token_dim=cfg.model_dim, seed=cfg.text_seed)
    fixed = None
    if cfg.text_source == "file":
        fixed = load_frozen_embeddings(cfg.text_path, labels, dim=cfg.model_dim).data
    else:
        encoder.check_distinct(labels)
    return TextBank(labels, encoder, mode or cfg.prompt_mode, context_length=cfg.prompt_context_length,
                    seed=cfg.seed, fixed=fixed)


def _meta_record(meta: dict) -> checkpoint.Record:
    raw = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    return checkpoint.Record(META, raw.astype(np.float64), True)


def read_meta(records: Dict[str, checkpoint.Record]) -> dict:
    if META not in records:
        raise checkpoint.FormatError("checkpoint has no metadata record")
    return json.loads(records[META].data.astype(np.uint8).tobytes().decode("utf-8"))


class _Cache:
    """Per-sample quantities that never change during a run."""

    def __init__(self):
        self.voxels: Dict[int, VoxelInput] = {}
        self.h2d: Dict[int, Raster] = {}
        self.pseudo: Dict[int, PseudoLabels] = {}

    def voxel_input(self, i: int, sample: PairSample) -> VoxelInput:
        if i not in self.voxels:
            self.voxels[i] = voxel_input(sample.grid)
        return self.voxels[i]


class Session:
    """One optimisation run over a fixed sample list; resumable from any step."""

    def __init__(self, cfg: TrainConfig, samples: Sequence[PairSample], model: LanguageGuidedModel,
                 bank: TextBank, classes: Sequence[str]):
        if not samples:
            raise ConfigError("dataset is empty")
        self.cfg, self.samples, self.model, self.bank = cfg, list(samples), model, bank
        self.classes = tuple(classes)
        self.stage = cfg.stage
        groups = PRETRAIN_GROUPS if self.stage == "pretrain" else FINETUNE_GROUPS
        self.trainable: List[Parameter] = [p for p in model.group(*groups) if not p.frozen]
        if self.stage == "finetune":
            self.trainable += [p for p in bank.parameters() if not p.frozen]
        self.optimizer = SgdMomentum(self.trainable, cfg.optimizer_lr, cfg.optimizer_momentum,
                                     cfg.optimizer_weight_decay, no_decay)
        self.steps_per_epoch = math.ceil(len(self.samples) / cfg.batch_size)
        self.total_steps = cfg.epochs * self.steps_per_epoch
        if cfg.max_steps:
            self.total_steps = min(self.total_steps, cfg.max_steps)
        self.schedule = LrSchedule(cfg.schedule_kind, cfg.optimizer_lr, cfg.schedule_factor, cfg.schedule_power,
                                   cfg.epochs * self.steps_per_epoch, cfg.schedule_warmup_steps,
                                   self.steps_per_epoch)
        self.step = 0
        self.cache = _Cache()
        self._trainable_ids = {id(p) for p in self.trainable}
        self._all = model.parameters() + bank.parameters() + [bank.encoder.table, bank.encoder.proj]
        self._started = time.perf_counter()

    # -- batching ----------------------------------------------------------------
    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.cfg.seed, epoch]).permutation(len(self.samples))

    def batch_indices(self, step: int) -> np.ndarray:
        epoch, b = divmod(step, self.steps_per_epoch)
        bs = self.cfg.batch_size
        return self.epoch_order(epoch)[b * bs:(b + 1) * bs]

    # -- losses ---------------------------------------------------------------------
    def _guard(self, name: str, fn: Callable[[], Tensor]) -> Optional[Tensor]:
        try:
            out = fn()
        except EmptySetError:
            return None
        except DegenerateError as exc:
            # e.g. a voxel whose ReLU features all died; the term sits this sample out
            log.warning("step %d: %s term skipped: %s", self.step, name, exc)
            return None
        except NumericalError as exc:
            raise TrainingAborted(self.step, name, str(exc)) from exc
        if not np.all(np.isfinite(out.data)):
            raise TrainingAborted(self.step, name)
        return out

    def _h2d(self, i: int, sample: PairSample) -> Raster:
        if not self.model.enc2d.parameters()[0].frozen:
            return self.model.encode_2d(sample.color)
        if i not in self.cache.h2d:
            self.cache.h2d[i] = self.model.encode_2d(sample.color)
        return self.cache.h2d[i]

    def _pseudo(self, i: int, sample: PairSample) -> PseudoLabels:
        if i not in self.cache.pseudo:
            if sample.cloud.labels is None:
                raise LabelError(f"sample {sample.frame_id} carries no labels")
            radius = self.cfg.aux_radius or sample.grid.voxel_size
            self.cache.pseudo[i] = assign_pseudo_labels(sample.grid.centroids, sample.cloud.positions,
                                                        sample.cloud.labels, radius)
        return self.cache.pseudo[i]

    def pretrain_terms(self, i: int, text: Tensor) -> Dict[str, Optional[Tensor]]:
        sample, cfg = self.samples[i], self.cfg
        m = self.model
        h2d = self._guard("encode_2d", lambda: self._h2d(i, sample).rows)
        z2d = m.decode_2d(self._h2d(i, sample))
        out = m.forward_3d(self.cache.voxel_input(i, sample), text)
        terms = {
            "encoder": self._guard("encoder", lambda: pixel_voxel_contrastive(h2d, out["h3d_hat"], sample.pairs,
                                                                              cfg.tau)),
            "decoder": self._guard("decoder", lambda: decoder_contrastive(z2d.rows, out["z3d"], sample.decoder_pairs,
                                                                          cfg.tau)),
            "depth": self._guard("depth", lambda: depth_loss(m.predict_depth(z2d), sample.depth)),
        }
        if cfg.aux_pretrain:
            terms["aux"] = self._guard("aux", lambda: auxiliary_loss(score_map(out["h3d_hat"], text),
                                                                     self._pseudo(i, sample), cfg.aux_temperature))
        return terms

    def finetune_terms(self, i: int, text: Tensor) -> Dict[str, Optional[Tensor]]:
        sample, cfg = self.samples[i], self.cfg
        labels = sample.grid.labels
        if labels is None:
            raise LabelError(f"sample {sample.frame_id} carries no labels")
        if labels.max() >= len(self.classes):
            raise LabelError(f"sample {sample.frame_id} has label {labels.max()} but only {len(self.classes)} classes")
        out = self.model.forward_3d(self.cache.voxel_input(i, sample), text)
        keep = np.flatnonzero(labels >= 0)

        def seg():
            return cross_entropy(take(self.model.segment(out["z3d"]), keep), labels[keep])

        return {
            "seg": self._guard("seg", seg),
            "aux": self._guard("aux", lambda: auxiliary_loss(score_map(out["h3d_hat"], text),
                                                             self._pseudo(i, sample), cfg.aux_temperature)),
        }

    def weights(self) -> Dict[str, float]:
        c = self.cfg
        return {"encoder": c.loss_weights_encoder, "decoder": c.loss_weights_decoder,
                "depth": c.loss_weights_depth, "aux": c.loss_weights_aux, "seg": 1.0}

    def sample_loss(self, i: int, text: Tensor) -> Tuple[Optional[Tensor], Dict[str, Optional[Tensor]]]:
        terms = self.pretrain_terms(i, text) if self.stage == "pretrain" else self.finetune_terms(i, text)
        w = self.weights()
        total = None
        for name, term in terms.items():
            if term is not None and w[name] != 0:
                part = term * w[name]
                total = part if total is None else total + part
        return total, terms

    # -- optimisation ------------------------------------------------------------------
    def train_step(self) -> dict:
        if self.step >= self.total_steps:
            raise StateError("run already finished")
        lr = schedule_lr(self.schedule, self.step)
        self.optimizer.lr = lr
        self.optimizer.zero_grad()
        text = self.bank.embeddings()
        total, used = None, 0
        sums: Dict[str, List[float]] = {}
        for i in self.batch_indices(self.step):
            try:
                loss, terms = self.sample_loss(int(i), text)
            except NumericalError as exc:
                raise TrainingAborted(self.step, "forward", str(exc)) from exc
            for name, term in terms.items():
                sums.setdefault(name, [])
                if term is not None:
                    sums[name].append(term.item())
            if loss is None:
                continue
            used += 1
            total = loss if total is None else total + loss
        record = {"stage": self.stage, "step": self.step, "epoch": self.step // self.steps_per_epoch, "lr": lr}
        if total is not None:
            total = total * (1.0 / used)
            try:
                total.backward()
            except NumericalError as exc:
                raise TrainingAborted(self.step, "backward", str(exc)) from exc
            for p in self.trainable:
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise TrainingAborted(self.step, f"gradient of {p.name}")
            before = {id(p): p.data for p in self._all if id(p) not in self._trainable_ids}
            self.optimizer.step(skip_missing=True)
            self._audit(before)
        record["loss"] = None if total is None else total.item()
        for name, values in sums.items():
            record[f"loss.{name}"] = float(np.mean(values)) if values else None
        record["samples"] = used
        record["wall_time"] = time.perf_counter() - self._started
        self.step += 1
        return record

    def _audit(self, before: Dict[int, np.ndarray]) -> None:
        for p in self._all:
            if id(p) in before and p.data is not before[id(p)]:
                raise StateError(f"parameter {p.name} changed outside the trainable set")

    def run(self, sink: Optional[MetricsSink] = None, until: Optional[int] = None) -> None:
        stop = self.total_steps if until is None else min(until, self.total_steps)
        while self.step < stop:
            record = self.train_step()
            if sink is not None:
                sink.emit(record)

    # -- persistence ----------------------------------------------------------------------
    def meta(self) -> dict:
        return {"stage": self.stage, "step": self.step, "classes": list(self.classes),
                "prompt_mode": self.bank.mode, "model": asdict(self.model.config),
                "text_seed": self.cfg.text_seed, "prompt_context_length": self.cfg.prompt_context_length}

    def records(self) -> List[checkpoint.Record]:
        recs = self.model.records()
        recs += [checkpoint.Record(p.name, p.data, p.frozen) for p in self.bank.parameters()]
        recs += [checkpoint.Record(VELOCITY + k, v, False) for k, v in sorted(self.optimizer.state_arrays().items())]
        recs.append(_meta_record(self.meta()))
        return recs

    def save(self, path) -> None:
        checkpoint.save(path, self.records())

    def resume(self, path) -> None:
        records = checkpoint.load(path)
        meta = read_meta(records)
        if meta["stage"] != self.stage:
            raise checkpoint.FormatError(f"checkpoint is from stage {meta['stage']}, not {self.stage}")
        self.model.load_records(records)
        _load_bank(self.bank, records)
        self.optimizer.load_state_arrays({k[len(VELOCITY):]: r.data for k, r in records.items()
                                          if k.startswith(VELOCITY)})
        self.step = int(meta["step"])


def _load_bank(bank: TextBank, records: Dict[str, checkpoint.Record], strict: bool = True) -> None:
    for p in bank.parameters():
        if p.name not in records:
            if strict:
                raise checkpoint.FormatError(f"checkpoint lacks {p.name}")
            continue
        if records[p.name].data.shape != p.shape:
            raise checkpoint.FormatError(f"{p.name}: shape mismatch")
        p.data = records[p.name].data.copy()


# -- stage entry points --------------------------------------------------------------------

def pretrain(cfg: TrainConfig, samples: Sequence[PairSample], classes: Sequence[str],
             sink: Optional[MetricsSink] = None, checkpoint_path=None, resume_from=None,
             model: Optional[LanguageGuidedModel] = None) -> Session:
    """Align the 3D branch to the frozen 2D features; handcrafted prompts over ``classes``."""
    cfg = cfg.replace(stage="pretrain")
    model = model or LanguageGuidedModel(model_config(cfg, len(classes)), freeze_2d=True)
    bank = build_textbank(cfg, classes, mode="handcrafted")
    session = Session(cfg, samples, model, bank, classes)
    if resume_from is not None:
        session.resume(resume_from)
    session.run(sink)
    if checkpoint_path is not None:
        session.save(checkpoint_path)
    return session


def finetune_session(cfg: TrainConfig, samples: Sequence[PairSample], classes: Sequence[str],
                     pretrained=None) -> Session:
    cfg = cfg.replace(stage="finetune")
    labels = LabelSet(classes)
    for s in samples:
        if s.grid.labels is None or (len(s.grid.labels) and s.grid.labels.max() >= len(labels)):
            raise LabelError(f"sample {s.frame_id} labels do not fit the {len(labels)}-class label set")
    model = LanguageGuidedModel(model_config(cfg, len(labels)))
    if pretrained is not None:
        records = checkpoint.load(pretrained)
        meta = read_meta(records)
        if meta["model"]["dim"] != cfg.model_dim or meta["model"]["dim_3d"] != cfg.model_dim_3d:
            raise checkpoint.FormatError("pre-trained checkpoint widths differ from the config")
        skip = ("head",) + (("tqm",) if cfg.finetune_reinit_tqm else ())
        model.load_records(records, strict=True, skip_groups=skip)
    bank = build_textbank(cfg, labels.names)
    return Session(cfg, samples, model, bank, labels.names)


def finetune(cfg: TrainConfig, samples: Sequence[PairSample], classes: Sequence[str], pretrained=None,
             sink: Optional[MetricsSink] = None, checkpoint_path=None, resume_from=None) -> Session:
    session = finetune_session(cfg, samples, classes, pretrained)
    if resume_from is not None:
        session.resume(resume_from)
    session.run(sink)
    if checkpoint_path is not None:
        session.save(checkpoint_path)
    return session


def predict(model: LanguageGuidedModel, bank: TextBank, sample: PairSample) -> np.ndarray:
    text = bank.embeddings()
    out = model.forward_3d(voxel_input(sample.grid), text)
    return np.argmax(model.segment(out["z3d"]).data, axis=1)


def evaluate(model: LanguageGuidedModel, bank: TextBank, samples: Sequence[PairSample],
             classes: Sequence[str]) -> SegmentationScores:
    k = len(classes)
    conf = np.zeros((k, k), dtype=np.int64)
    for s in samples:
        if s.grid.labels is None:
            raise LabelError(f"sample {s.frame_id} carries no labels")
        pred = predict(model, bank, s)
        keep = s.grid.labels >= 0
        conf += confusion_matrix(pred[keep], s.grid.labels[keep], k)
    return segmentation_scores(conf, classes)


def load_for_eval(path, cfg: Optional[TrainConfig] = None) -> Tuple[LanguageGuidedModel, TextBank, dict]:
    """Rebuild model and text bank from a fine-tune checkpoint."""
    records = checkpoint.load(path)
    meta = read_meta(records)
    mc = ModelConfig(**{**meta["model"], "enc2d_channels": tuple(meta["model"]["enc2d_channels"])})
    model = LanguageGuidedModel(mc)
    model.load_records(records)
    base = cfg or TrainConfig()
    base = base.replace(model_dim=mc.dim, text_seed=meta.get("text_seed", 0), prompt_mode=meta["prompt_mode"],
                        prompt_context_length=meta.get("prompt_context_length", base.prompt_context_length))
    bank = build_textbank(base, meta["classes"])
    _load_bank(bank, records)
    return model, bank, meta
