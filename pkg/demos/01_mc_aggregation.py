"""
Summarizing MC-dropout runs for one anchor
==========================================

Ten stochastic forward passes give ten boxes, ten aleatoric covariances and
ten logit vectors. We reduce them to one Gaussian over the box and one
categorical distribution over the classes.
"""

import numpy as np

from bayesod import AnchorPrediction, aggregate_box, aggregate_categorical, combine_covariance

rng = np.random.default_rng(0)
T = 10

# a box around (100, 80, 220, 190) that wobbles a few pixels between runs
box = np.array([100.0, 80.0, 220.0, 190.0])
samples = box + rng.normal(0, 3.0, size=(T, 4))
aleatoric = np.broadcast_to(np.diag([4.0, 4.0, 9.0, 9.0]), (T, 4, 4))
logits = rng.normal(0, 1.0, size=(T, 3)) + [3.0, 0.0, 0.0]
pred = AnchorPrediction(anchor_id=0, box_samples=samples, aleatoric_covs=aleatoric, logit_samples=logits)

# epistemic part: spread of the run means
mean, epistemic = aggregate_box(pred)
print("mean box        ", np.round(mean, 2))
print("epistemic diag  ", np.round(np.diag(epistemic), 2))

# total covariance adds the average reported aleatoric covariance
total = combine_covariance(epistemic, pred.aleatoric_covs)
print("total diag      ", np.round(np.diag(total), 2))

# class probabilities are the average of the per-run softmaxes
probs = aggregate_categorical(pred).probs
print("class probs     ", np.round(probs, 3))
