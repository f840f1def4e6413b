"""Confusion-matrix metrics and the JSON-lines metrics stream."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO

import numpy as np


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    pred, truth = np.asarray(pred, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("prediction and ground truth differ in length")
    return np.bincount(truth * num_classes + pred, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes)


@dataclass
class SegmentationScores:
    iou: Dict[str, Optional[float]]   # None for classes absent from the ground truth
    miou: float
    macc: float

    def as_record(self) -> Dict[str, float]:
        rec = {"mIoU": self.miou, "mAcc": self.macc}
        rec.update({f"iou.{k}": v for k, v in self.iou.items()})
        return rec


def segmentation_scores(conf: np.ndarray, class_names: Sequence[str]) -> SegmentationScores:
    """IoU = TP / (TP + FP + FN); means run over classes present in the ground truth."""
    tp = np.diag(conf).astype(np.float64)
    gt = conf.sum(axis=1).astype(np.float64)
    pr = conf.sum(axis=0).astype(np.float64)
    present = gt > 0
    if not present.any():
        raise ValueError("ground truth is empty")
    union = gt + pr - tp
    iou = np.where(present, tp / np.where(union > 0, union, 1), np.nan)
    recall = np.where(present, tp / np.where(gt > 0, gt, 1), np.nan)
    per_class = {name: (float(v) if p else None) for name, v, p in zip(class_names, iou, present)}
    return SegmentationScores(per_class, float(iou[present].mean()), float(recall[present].mean()))


class MetricsSink:
    """Append-only JSON-lines writer (file and/or a text stream)."""

    def __init__(self, path=None, stream: Optional[TextIO] = None):
        self.path = None if path is None else Path(path)
        self.stream = stream
        self.records: List[dict] = []
        self._fh = open(self.path, "a", encoding="utf-8") if self.path is not None else None

    def emit(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=False, allow_nan=False)
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()
        if self.stream is not None:
            self.stream.write(line + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def stdout_sink() -> MetricsSink:
    return MetricsSink(stream=sys.stdout)


def read_metrics(path) -> List[dict]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out
