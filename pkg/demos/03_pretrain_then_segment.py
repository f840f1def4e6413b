"""
Pre-train, fine-tune, evaluate
==============================

A small end-to-end run on synthetic rooms. Takes about a minute.
"""

from langvox.dataset import SyntheticSceneSpec, generate_synthetic_scene, scene_samples
from langvox.trainer import MetricsSink, TrainConfig, evaluate, finetune, pretrain

classes = ("floor", "wall", "chair", "table")
train = scene_samples(generate_synthetic_scene(SyntheticSceneSpec(classes=classes, seed=1, frames=8)))
test = scene_samples(generate_synthetic_scene(SyntheticSceneSpec(classes=classes, seed=2, frames=4)))
print(len(train), "training pairs,", len(test), "held-out pairs")

# stage one: no labels, the 3D branch learns to agree with frozen image features
sink = MetricsSink()
pretrain(TrainConfig(seed=1, batch_size=4, epochs=2), train, classes, sink=sink,
         checkpoint_path="/tmp/demo_pre.ckpt")
losses = [r["loss"] for r in sink.records if "loss" in r]
print("pre-train loss: %.3f -> %.3f" % (losses[0], losses[-1]))

# stage two: voxel labels, language-guided head
cfg = TrainConfig(stage="finetune", seed=1, batch_size=4, epochs=20, optimizer_lr=0.02,
                  schedule_kind="polynomial", prompt_mode="learnable")
session = finetune(cfg, train, classes, pretrained="/tmp/demo_pre.ckpt")

scores = evaluate(session.model, session.bank, test, classes)
print("held-out mIoU %.3f  mAcc %.3f" % (scores.miou, scores.macc))
for name, iou in scores.iou.items():
    print("  %-6s %s" % (name, "absent" if iou is None else "%.3f" % iou))
