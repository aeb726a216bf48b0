"""Training objectives for the graph autoencoder and the classifier head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .events import N_CLUSTERS
from .layers import flatten_latent


@dataclass(frozen=True)
class LossWeights:
    alpha_pool: float = 1e-4
    alpha_assoc: float = 0.1
    beta_walker: float = 1.0
    beta_visit: float = 0.3
    mlp_l2: float = 1e-4

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ad.ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def reconstruction_loss(x, x_hat) -> Tensor:
    """Mean squared difference over all entries."""
    x, x_hat = ad.as_tensor(x), ad.as_tensor(x_hat)
    _check_same(x, x_hat, "reconstruction_loss")
    diff = ad.subtract(x, x_hat)
    return ad.mean(ad.hadamard(diff, diff))


def pooling_loss(a, s) -> Tensor:
    """||A - S S^T||_F plus the mean row entropy of S, averaged over a batch of S."""
    a, s = ad.as_tensor(a), ad.as_tensor(s)
    n = s.shape[-2]
    if a.shape[-2:] != (n, n):
        raise ad.ShapeError(f"pooling_loss: adjacency {a.shape} does not match assignment {s.shape}")
    link = ad.mean(ad.frobenius_norm(ad.subtract(a, ad.matmul(s, ad.transpose(s)))))
    entropy = ad.scale(ad.mean(ad.row_sum(ad.xlogx(s))), -1.0)
    return ad.add(link, entropy)


def transition_probabilities(zs, zt) -> tuple[Tensor, Tensor]:
    zs, zt = ad.as_tensor(zs), ad.as_tensor(zt)
    if zs.value.ndim != 2 or zt.value.ndim != 2 or zs.shape[1] != zt.shape[1]:
        raise ad.ShapeError(f"transition_probabilities: embeddings {zs.shape} and {zt.shape} differ in width")
    m = ad.matmul(zs, ad.transpose(zt))
    return ad.row_softmax(m), ad.row_softmax(ad.transpose(m))


def walker_targets(labels: Sequence[int]) -> np.ndarray:
    """T[i, j] = 1/|class(i)| when i and j share a class, else 0."""
    labels = np.asarray(labels)
    same = (labels[:, None] == labels[None, :]).astype(np.float64)
    return same / same.sum(axis=1, keepdims=True)


def walker_loss(pst, pts, source_labels: Sequence[int]) -> Tensor:
    round_trip = ad.matmul(pst, pts)
    targets = walker_targets(source_labels)
    if targets.shape != round_trip.shape:
        raise ad.ShapeError(f"walker_loss: {len(source_labels)} labels for round trips of shape {round_trip.shape}")
    return ad.scale(ad.mean(ad.row_sum(ad.hadamard(targets, ad.log(round_trip)))), -1.0)


def visit_loss(pst) -> Tensor:
    """Cross-entropy between the uniform distribution and the mean visit probability per target."""
    pst = ad.as_tensor(pst)
    ns = pst.shape[0]
    visit = ad.scale(ad.row_sum(ad.transpose(pst)), 1.0 / ns)
    return ad.scale(ad.mean(ad.log(visit)), -1.0)


def associative_terms(zs, zt, source_labels, weights: LossWeights) -> tuple[Tensor, Tensor, Tensor]:
    pst, pts = transition_probabilities(zs, zt)
    walker = walker_loss(pst, pts, source_labels)
    visit = visit_loss(pst)
    total = ad.add(ad.scale(walker, weights.beta_walker), ad.scale(visit, weights.beta_visit))
    return total, walker, visit


def associative_loss(zs, zt, source_labels, weights: LossWeights | None = None) -> Tensor:
    return associative_terms(zs, zt, source_labels, weights or LossWeights())[0]


@dataclass
class LossBreakdown:
    total: Tensor
    rec: float
    pool: float
    walker: float
    visit: float

    @property
    def value(self) -> float:
        return self.total.value.item()

    def row(self) -> dict[str, float]:
        return {
            "L_total": self.value,
            "L_rec": self.rec,
            "L_pool": self.pool,
            "L_walker": self.walker,
            "L_visit": self.visit,
        }


def _batched(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def combine_ae_terms(rec: Tensor, pool: Tensor, assoc: Tensor, walker: Tensor, visit: Tensor,
                     weights: LossWeights) -> LossBreakdown:
    total = ad.add(ad.add(rec, ad.scale(pool, weights.alpha_pool)), ad.scale(assoc, weights.alpha_assoc))
    return LossBreakdown(total, rec.value.item(), pool.value.item(), walker.value.item(), visit.value.item())


def autoencoder_loss(model, source, target, weights: LossWeights | None = None) -> LossBreakdown:
    """L_rec + a_pool L_pool + a_assoc L_assoc for one source batch and one target batch.

    ``source`` is ``(a_norm, x, labels)`` and ``target`` is ``(a_norm, x)``:
    target labels never enter. Reconstruction and pooling terms are averaged
    sample-wise over both batches; the association term uses the flattened
    latent codes.
    """
    weights = weights or LossWeights()
    a_s, x_s, y_s = source
    a_t, x_t = target[0], target[1]
    x_s, x_t = _batched(x_s), _batched(x_t)
    ns, nt = x_s.shape[0], x_t.shape[0]
    if ns == 0 or nt == 0:
        raise ValueError("autoencoder_loss needs non-empty source and target batches")
    if len(y_s) != ns:
        raise ValueError(f"{len(y_s)} source labels for {ns} source samples")

    enc_s, xh_s = model.reconstruct(a_s, x_s)
    enc_t, xh_t = model.reconstruct(a_t, x_t)
    ws, wt = ns / (ns + nt), nt / (ns + nt)

    rec = ad.add(ad.scale(reconstruction_loss(x_s, xh_s), ws), ad.scale(reconstruction_loss(x_t, xh_t), wt))
    pool = ad.add(ad.scale(pooling_loss(a_s, enc_s.s), ws), ad.scale(pooling_loss(a_t, enc_t.s), wt))
    assoc, walker, visit = associative_terms(flatten_latent(enc_s.z), flatten_latent(enc_t.z), y_s, weights)
    return combine_ae_terms(rec, pool, assoc, walker, visit, weights)


def cross_entropy(probabilities, labels: Sequence[int]) -> Tensor:
    probabilities = ad.as_tensor(probabilities)
    labels = np.asarray(labels, dtype=np.int64)
    n_rows, n_classes = probabilities.shape
    if labels.shape != (n_rows,):
        raise ValueError(f"{labels.shape[0]} labels for {n_rows} rows")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    onehot = np.zeros((n_rows, n_classes))
    onehot[np.arange(n_rows), labels] = 1.0
    return ad.scale(ad.mean(ad.row_sum(ad.hadamard(onehot, ad.log(probabilities)))), -1.0)


def classification_loss(probabilities, labels, l2_weight: float = 1e-4, params=()) -> Tensor:
    """Mean cross-entropy plus ``l2_weight`` times the summed squared norms of ``params``."""
    probabilities = ad.as_tensor(probabilities)
    if probabilities.shape[1] != N_CLUSTERS:
        raise ad.ShapeError(f"expected {N_CLUSTERS} class probabilities, got {probabilities.shape}")
    loss = cross_entropy(probabilities, labels)
    if l2_weight and params:
        penalty = ad.frobenius_norm_sq(params[0])
        for p in params[1:]:
            penalty = ad.add(penalty, ad.frobenius_norm_sq(p))
        loss = ad.add(loss, ad.scale(penalty, l2_weight))
    return loss
