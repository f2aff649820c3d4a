"""Demographic-subspace debiasing and the training losses.

The sensitive directions are estimated once from the demographic text
prompts, image embeddings are split into a bias component (inside the
subspace) and a debiased remainder (orthogonal complement), and the
losses combine a hinge that caps similarity to any demographic prompt
with a symmetric two-term contrastive alignment objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .svd import top_right_singular_vectors
from .tensor import Tensor

__all__ = [
    "DemographicSubspace",
    "LossBreakdown",
    "build_subspace",
    "project_out",
    "fairness_loss",
    "task_loss",
    "joint_loss",
]


@dataclass(frozen=True)
class DemographicSubspace:
    """Orthonormal basis of the sensitive-attribute directions.

    ``basis`` rows span the demographic subspace; ``templates`` holds
    the unit text embeddings the basis was estimated from (one row per
    demographic category, in template order). Immutable and shareable.
    """

    attribute: str
    basis: np.ndarray
    templates: np.ndarray
    retained: int
    completed: int = 0

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64)
        templates = np.asarray(self.templates, dtype=np.float64)
        if basis.ndim != 2 or templates.ndim != 2:
            raise ValueError("basis and templates must be 2-D")
        if basis.shape[1] != templates.shape[1]:
            raise ValueError(
                f"basis dim {basis.shape[1]} != template dim {templates.shape[1]}"
            )
        if self.retained != basis.shape[0]:
            raise ValueError(f"retained={self.retained} but basis has {basis.shape[0]} rows")
        gram = basis @ basis.T
        if not np.allclose(gram, np.eye(basis.shape[0]), atol=1e-9):
            raise ValueError("basis rows are not orthonormal")
        basis.setflags(write=False)
        templates.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "templates", templates)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def category_count(self) -> int:
        return self.templates.shape[0]


def build_subspace(encoder, templates: Sequence[str], k: int = 1,
                   attribute: str = "") -> DemographicSubspace:
    """Estimate the top-k demographic directions from template strings.

    Each template is embedded with the frozen text tower; the stacked
    rows are reduced to their leading right singular vectors.
    """
    templates = list(templates)
    if len(templates) < 2:
        raise ValueError("need at least two demographic templates")
    if not 1 <= k <= len(templates):
        raise ValueError(f"k={k} outside [1, {len(templates)}]")
    rows = np.stack([encoder.encode_text(s) for s in templates])
    basis = top_right_singular_vectors(rows, k)
    return DemographicSubspace(
        attribute=attribute,
        basis=basis.vectors,
        templates=rows,
        retained=k,
        completed=basis.completed,
    )


def project_out(z: Tensor | np.ndarray, sub: DemographicSubspace) -> tuple[Tensor, Tensor]:
    """Split embeddings into (debiased, bias) parts against the subspace.

    ``z`` is (d,) or (B, d). The bias part is the orthogonal projection
    onto the basis rows; debiased + bias reconstructs the input exactly
    and the split is differentiable.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    single = z.ndim == 1
    if single:
        z = T.reshape(z, (1, z.shape[0]))
    if z.ndim != 2 or z.shape[1] != sub.dim:
        raise ValueError(f"embeddings of shape {z.shape} do not match subspace dim {sub.dim}")
    coeffs = T.matmul(z, Tensor(sub.basis.T))
    bias = T.matmul(coeffs, Tensor(sub.basis))
    debiased = T.sub(z, bias)
    if single:
        d = sub.dim
        return T.reshape(debiased, (d,)), T.reshape(bias, (d,))
    return debiased, bias


def fairness_loss(z_debiased: Tensor | np.ndarray, sub: DemographicSubspace,
                  mu: float) -> Tensor:
    """Hinge on similarity to every demographic prompt, per sample.

    Returns the per-sample sum over categories of max(0, cos - mu):
    scalar for a single vector, (B,) for a batch. The gradient vanishes
    once every cosine is at or below the margin.
    """
    if not 0.0 <= mu < 1.0:
        raise ValueError(f"margin mu={mu} outside [0, 1)")
    z = z_debiased if isinstance(z_debiased, Tensor) else Tensor(z_debiased)
    single = z.ndim == 1
    if single:
        z = T.reshape(z, (1, z.shape[0]))
    if z.ndim != 2 or z.shape[1] != sub.dim:
        raise ValueError(f"embeddings of shape {z.shape} do not match subspace dim {sub.dim}")
    unit = T.l2_normalize(z)  # raises on a zero-norm (fully projected-out) row
    cos = T.matmul(unit, Tensor(sub.templates.T))
    per_sample = T.reduce_sum(T.relu(T.sub(cos, Tensor(float(mu)))), axis=1)
    if single:
        return T.reshape(per_sample, ())
    return per_sample


def task_loss(z_debiased: Tensor, z_raw: Tensor, targets: np.ndarray,
              temperature: float, as_printed: bool = False,
              symmetric: bool = False) -> Tensor:
    """Two-term in-batch contrastive alignment loss.

    Term one aligns each debiased image embedding with its own target
    text against the other samples' targets; term two runs the reverse
    direction (text against images) on the raw embeddings, or on the
    debiased ones when ``symmetric`` is set. ``as_printed`` flips the
    overall sign for auditing the source formula as written.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    targets = np.asarray(targets, dtype=np.float64)
    if z_debiased.ndim != 2 or z_raw.ndim != 2 or targets.ndim != 2:
        raise ValueError("task_loss expects (B, d) embeddings and targets")
    n = z_debiased.shape[0]
    if z_raw.shape != z_debiased.shape or targets.shape != z_debiased.shape:
        raise ValueError(
            f"shape mismatch: {z_debiased.shape} vs {z_raw.shape} vs {targets.shape}"
        )
    if n < 1:
        raise ValueError("empty batch")
    text = Tensor(targets.T)
    inv_t = 1.0 / float(temperature)
    diag = np.arange(n)

    image_rows = T.l2_normalize(z_debiased)
    logits_i2t = T.scale(T.matmul(image_rows, text), inv_t)
    term1 = T.scale(T.reduce_mean(T.take_per_row(T.log_softmax(logits_i2t, axis=1), diag)), -1.0)

    second = image_rows if symmetric else T.l2_normalize(z_raw)
    logits_t2i = T.scale(T.matmul(second, text), inv_t)
    term2 = T.scale(T.reduce_mean(T.take_per_row(T.log_softmax(logits_t2i, axis=0), diag)), -1.0)

    loss = T.add(term1, term2)
    return T.scale(loss, -1.0) if as_printed else loss


@dataclass(frozen=True)
class LossBreakdown:
    """Joint objective split into its reported components."""

    l_vlm: Tensor
    l_fair: Tensor
    l_final: Tensor
    lam1: float


def joint_loss(task: Tensor, fair_per_sample: Tensor, lam1: float) -> LossBreakdown:
    """Combine task and fairness terms: final = task + lam1 * mean(fair)."""
    if lam1 < 0.0:
        raise ValueError("lam1 must be >= 0")
    l_fair = T.reduce_mean(fair_per_sample) if fair_per_sample.ndim else fair_per_sample
    l_final = T.add(task, T.scale(l_fair, float(lam1)))
    return LossBreakdown(l_vlm=task, l_fair=l_fair, l_final=l_final, lam1=float(lam1))
