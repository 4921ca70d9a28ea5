#!/usr/bin/env python3
"""A complete miniature run: synthesize clips, train, evaluate, explain.

Uses a reduced dataset (4 categories, 16x16 frames) so the whole script
finishes in about a minute. The full-scale configuration lives in the
acceptance suite (tests/test_acceptance.py).

Run from the repository root:  python3 demos/03_train_and_explain.py
Outputs land in demos/out/.
"""

import time
from pathlib import Path

import numpy as np

from twostream import (
    BackboneConfig,
    SynthConfig,
    TrainingConfig,
    build_model,
    confusion_matrix,
    forward_clip,
    generate_synthetic_dataset,
    input_saliency,
    mean_average_precision,
    prepare_samples,
    train,
)
from twostream.imageio import write_pgm, write_ppm

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)
t0 = time.time()

synth = SynthConfig(num_motion_categories=2, num_appearance_categories=2,
                    train_clips_per_category=12, test_clips_per_category=4,
                    frame_size=16, frames_per_clip=6, noise_std=0.02, seed=7)
train_clips, test_clips = generate_synthetic_dataset(synth)
print(f"dataset: {len(train_clips)} train / {len(test_clips)} test clips, "
      f"{synth.num_categories} categories")

backbone = BackboneConfig(input_size=(16, 16), stage_channels=(8, 16), convs_per_stage=1)
model = build_model(num_categories=synth.num_categories, time_step=synth.frames_per_clip - 1,
                    backbone_config=backbone, seed=0, lstm_hidden=32)

train_samples = prepare_samples(train_clips, model.time_step, backbone.input_size)
test_samples = prepare_samples(test_clips, model.time_step, backbone.input_size)
print(f"preprocessing done at {time.time() - t0:.0f}s "
      f"(each clip became {model.time_step} frame/flow pairs)")

config = TrainingConfig(batch_size=2, max_epochs=14, rmsprop_lr=0.003, seed=0)
model, history = train(model, None, config, samples=train_samples)
for record in history.records[::4]:
    print(f"  epoch {record.epoch:2d} [{record.phase:7s}] "
          f"loss {record.total_loss:7.4f}  train acc {record.accuracy:.2f}")

scores, labels, predictions = [], [], []
for pairs, label in test_samples:
    probs = forward_clip(model, pairs).final_probs.data
    scores.append(probs)
    labels.append(label)
    predictions.append(int(probs.argmax()))
accuracy = float(np.mean([p == a for p, a in zip(predictions, labels)]))
map_value, aps = mean_average_precision(np.array(scores), np.array(labels))
print(f"\ntest accuracy {accuracy:.2f},  mAP {map_value:.3f}")
print("confusion matrix (rows = predicted, columns = actual):")
print(confusion_matrix(predictions, labels, synth.num_categories).to_text())

# gradient saliency for the first test clip's true category
pairs, label = test_samples[0]
saliency = input_saliency(model, pairs, category=label)
for t, (frame_map, flow_map) in enumerate(zip(saliency.frame_maps, saliency.flow_maps)):
    for kind, sal, src in (("frame", frame_map, pairs[t][0]), ("flow", flow_map, pairs[t][1])):
        peak = sal.max()
        img = np.zeros_like(sal, dtype=np.uint8) if peak <= 0 else \
            np.clip(np.rint(sal / peak * 255), 0, 255).astype(np.uint8)
        write_pgm(img, out_dir / f"saliency_{kind}_{t}.pgm")
        write_ppm(src, out_dir / f"input_{kind}_{t}.ppm")
print(f"wrote saliency maps and inputs for clip of category {label} to {out_dir}")
print(f"total {time.time() - t0:.0f}s")
