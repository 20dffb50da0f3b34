"""Numerical reference implementations of the two SSL objectives.

Pure double-precision functions with analytic gradients. These pin down the
math the cropped pseudo images are ultimately consumed by; there is no
encoder, optimizer or training loop here.

* ``infonce_loss``: contrastive cross-entropy of one positive key against
  many negatives, logits q.k / tau.
* ``byol_loss``: squared distance of the L2-normalized embeddings,
  identically 2 * (1 - cosine).
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["infonce_loss", "infonce_loss_from_logits", "byol_loss"]


def _vec(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def infonce_loss_from_logits(logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy of logit 0 among all logits, with softmax probabilities.

    Stabilized by subtracting the max logit, so the loss is shift-invariant:
    adding any constant to every logit leaves it unchanged.
    """
    logits = _vec(logits, "logits")
    m = float(logits.max())
    z = np.exp(logits - m)
    s = float(z.sum())
    loss = math.log(s) + m - float(logits[0])
    return loss, z / s


def infonce_loss(q, k_pos, k_negs, tau: float) -> tuple[float, np.ndarray]:
    """Contrastive loss -log(exp(q.k+/tau) / sum over {k+} u {k-} of exp(q.k/tau)).

    Args:
        q: query embedding.
        k_pos: the positive key.
        k_negs: iterable of negative keys (may be empty).
        tau: temperature, > 0.

    Returns:
        (loss, gradient of the loss w.r.t. q). The loss is >= 0 and equals
        the cross-entropy of the positive among the K+1 candidates.
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    q = _vec(q, "q")
    keys = [_vec(k_pos, "k_pos")] + [_vec(k, "k_neg") for k in k_negs]
    for k in keys:
        if k.shape != q.shape:
            raise ValueError(f"key length {k.size} does not match query length {q.size}")
    kmat = np.stack(keys)
    logits = kmat @ q / tau
    loss, probs = infonce_loss_from_logits(logits)
    grad_q = (probs @ kmat - kmat[0]) / tau
    return loss, grad_q


def byol_loss(q, z) -> tuple[float, np.ndarray, np.ndarray]:
    """Squared distance of the L2-normalized vectors: 2 * (1 - cos(q, z)).

    Returns (loss, gradient w.r.t. q, gradient w.r.t. z). The loss lies in
    [0, 4]: 0 for aligned, 2 for orthogonal, 4 for opposite vectors. Scale
    does not matter; zero vectors are rejected.
    """
    q = _vec(q, "q")
    z = _vec(z, "z")
    if q.shape != z.shape:
        raise ValueError(f"vector lengths differ: {q.size} vs {z.size}")
    nq = float(np.linalg.norm(q))
    nz = float(np.linalg.norm(z))
    if nq == 0.0 or nz == 0.0:
        raise ValueError("zero vector has no direction to compare")
    cos = float(np.clip(q @ z / (nq * nz), -1.0, 1.0))
    loss = 2.0 * (1.0 - cos)
    qh = q / nq
    zh = z / nz
    grad_q = (-2.0 / nq) * (zh - cos * qh)
    grad_z = (-2.0 / nz) * (qh - cos * zh)
    return loss, grad_q, grad_z
