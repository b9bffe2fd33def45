"""Category embedding learning module.

One unit per (modality, category). A unit maps the pooled modality vector
to a category embedding with a single affine layer (no activation), and
predicts the category's classes from that embedding with a second affine
layer. The class predictions feed only the auxiliary training loss.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class CelmUnit:
    W0: Tensor
    b0: Tensor
    W1: Tensor
    b1: Tensor


def celm_forward(x_g: Tensor, unit: CelmUnit) -> tuple[Tensor, Tensor]:
    """Return ``(h, logits)``; ``softmax(logits)`` is the auxiliary prediction."""
    h = ad.affine(x_g, unit.W0, unit.b0)
    return h, ad.affine(h, unit.W1, unit.b1)


def celm_aux_loss(aux_logits, labels) -> Tensor:
    """Summed cross-entropy over categories for one modality.

    ``aux_logits[j]`` is (B, k_j) and ``labels`` is (B, n_categories);
    returns per-example losses of shape (B,).
    """
    losses = [ad.cross_entropy(lg, labels[:, j]) for j, lg in enumerate(aux_logits)]
    out = losses[0]
    for l in losses[1:]:
        out = ad.add(out, l)
    return out
