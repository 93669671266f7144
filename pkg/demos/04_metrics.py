"""
Scoring detections and their uncertainty
========================================

mAP checks where the boxes are. MUE checks whether entropy separates true
from false positives. PDQ scores the full box distribution and the label
probability together.
"""

from bayesod import FusionConfig, SceneConfig, bayesod_inference, evaluate, generate_dataset
from bayesod.metrics import minimum_uncertainty_error

# MUE on toy entropies: perfect split, interleaved, identical
print(minimum_uncertainty_error([1, 2], [3, 4]))
print(minimum_uncertainty_error([1, 3], [2, 4]))
print(minimum_uncertainty_error([1, 2, 3], [1, 2, 3]))

# all metrics on a small synthetic corpus
cfg = SceneConfig(num_images=30, seed=4)
scenes = generate_dataset(cfg)
dets = [d for s in scenes for d in bayesod_inference(s.predictions, FusionConfig(), image_id=s.image_id)]
gts = [g for s in scenes for g in s.ground_truth]
report = evaluate(dets, gts, cfg.categories.names, image_sizes=(cfg.image_width, cfg.image_height))
for key in ("mAP", "mGMUE", "mCMUE", "PDQ"):
    print(f"{key:6s} {getattr(report, key):.2f}")
