"""Feature-margin separation with synthesized pseudo-features.

Each known-class anchor pulls toward a positive (its high-saliency part's
feature) and pushes from a negative (a different-class feature) under a
weighted hinge triplet loss. To densify the feature pairs, Gaussian-noised
copies of the anchor that the head still classifies correctly may replace
either the positive or the negative - never both for one triplet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoder import Model

__all__ = [
    "Triplet",
    "RunningStd",
    "pseudo_features",
    "build_triplet",
    "margin_loss",
]


@dataclass
class Triplet:
    anchor: object  # Tensor or ndarray feature
    positive: object
    negative: object
    replacement: str  # "none" | "positive" | "negative"
    anchor_class: int = -1
    negative_class: int = -1


class RunningStd:
    """Exponential moving average of the per-dimension feature std.

    Starts at ones so early noise draws have a sane scale; updates happen
    between optimizer steps only.
    """

    def __init__(self, dim: int, momentum: float = 0.9):
        self.value = np.ones(dim)
        self.momentum = momentum
        self._seen = False

    def update(self, features: np.ndarray) -> None:
        batch_std = np.asarray(features, dtype=np.float64).std(axis=0)
        if not self._seen:
            self.value = batch_std
            self._seen = True
        else:
            self.value = self.momentum * self.value + (1.0 - self.momentum) * batch_std


def pseudo_features(feature, noise_weights, model: Model, label, rng,
                    feature_std=None):
    """One verified Gaussian-noised copy of `feature`, or None.

    Draws one candidate per noise weight (std = weight * running feature
    std per dimension), keeps those whose argmax cosine logit still equals
    the anchor's label, and returns a uniformly chosen survivor. An empty
    result is a legitimate outcome.
    """
    f = np.asarray(feature, dtype=np.float64)
    if feature_std is None:
        feature_std = np.ones_like(f)
    candidates = []
    for w in noise_weights:
        cand = f + rng.normal(size=f.shape) * (float(w) * feature_std)
        if int(model.feature_logits(cand).argmax()) == int(label):
            candidates.append(cand)
    if not candidates:
        return None
    return candidates[int(rng.integers(len(candidates)))]


def build_triplet(anchor, positive, negative, pseudo, p_replace, rng) -> Triplet:
    """Assemble one triplet, possibly substituting the pseudo-feature.

    anchor and negative are (feature, class) pairs; positive is the
    high-part feature. With probability p_replace, and only when a pseudo
    feature is available, a fair coin replaces exactly one of positive or
    negative with it.
    """
    anchor_feat, anchor_class = anchor
    negative_feat, negative_class = negative
    if int(anchor_class) == int(negative_class):
        raise ValueError("triplet negative must come from a different class")
    replacement = "none"
    pos, neg = positive, negative_feat
    if pseudo is not None and rng.random() < p_replace:
        if rng.random() < 0.5:
            pos, replacement = pseudo, "positive"
        else:
            neg, replacement = pseudo, "negative"
    return Triplet(
        anchor=anchor_feat,
        positive=pos,
        negative=neg,
        replacement=replacement,
        anchor_class=int(anchor_class),
        negative_class=int(negative_class),
    )


def _as_tensor(tape, value):
    return value if isinstance(value, ad.Tensor) else tape.leaf(np.asarray(value, dtype=np.float64))


def margin_loss(triplet: Triplet, pos_weight, neg_weight, margin):
    """Hinged weighted triplet loss:

        max(0, pos_weight * d(anchor, positive)
              - neg_weight * d(anchor, negative) + margin)

    with Euclidean d. Differentiable wherever the hinge is strictly
    positive; returns a Tensor when any member is on a tape, else a float.
    """
    if pos_weight < 0 or neg_weight < 0 or margin < 0:
        raise ValueError("triplet weights and margin must be nonnegative")
    members = (triplet.anchor, triplet.positive, triplet.negative)
    tensors = [m for m in members if isinstance(m, ad.Tensor)]
    if tensors:
        tape = tensors[0].tape
        a, p, n = (_as_tensor(tape, m) for m in members)
        d_pos = ad.euclidean(a, p)
        d_neg = ad.euclidean(a, n)
        pre = ad.add_const(
            ad.add(ad.scale(d_pos, pos_weight), ad.scale(d_neg, -neg_weight)), margin
        )
        return ad.relu(pre)
    a, p, n = (np.asarray(m, dtype=np.float64) for m in members)
    if not all(np.isfinite(v).all() for v in (a, p, n)):
        raise ValueError("margin_loss rejects non-finite features")
    d_pos = float(np.linalg.norm(a - p))
    d_neg = float(np.linalg.norm(a - n))
    return max(0.0, pos_weight * d_pos - neg_weight * d_neg + margin)
