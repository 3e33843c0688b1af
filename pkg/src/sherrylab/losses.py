"""Training objectives and their analytic gradients.

All functions are pure, operate in float64, and return plain scalars. Each
``*_grad`` variant returns the loss together with the gradients the trainer
needs; the test suite checks every gradient against central finite
differences and every value against a straight-line reimplementation.

The combined objective is alignment + lambda * distillation. The plain
classification loss exists for the ablation mode that swaps the frozen
text-bank classifier for a randomly initialized trainable one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (LabelOutOfRange, NonFinite, NotNormalizedBank,
                     ShapeMismatch, ZeroVector)


@dataclass(frozen=True)
class LossConfig:
    tau_cls: float = 1.0
    tau_align: float = 0.05
    lam: float = 1.0

    def validate(self) -> None:
        if self.tau_cls <= 0 or self.tau_align <= 0:
            raise NonFinite("temperatures must be positive")
        if self.lam < 0:
            raise NonFinite("lambda must be nonnegative")

    def to_dict(self) -> dict:
        return {"tau_cls": self.tau_cls, "tau_align": self.tau_align, "lam": self.lam}


def softmax(z: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax along the last axis, max-subtracted for stability."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFinite("softmax input contains non-finite values")
    if tau <= 0:
        raise NonFinite(f"temperature must be positive, got {tau}")
    s = z / tau
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _check_logits_labels(logits: np.ndarray, labels: np.ndarray):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeMismatch(f"expected NxC logits, got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ShapeMismatch(
            f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LabelOutOfRange(
            f"labels must lie in [0, {logits.shape[1]}), got "
            f"[{labels.min()}, {labels.max()}]")
    return logits, labels.astype(np.intp)


def classification_loss(logits: np.ndarray, labels: np.ndarray,
                        tau: float = 1.0) -> float:
    loss, _ = classification_loss_grad(logits, labels, tau)
    return loss


def classification_loss_grad(logits: np.ndarray, labels: np.ndarray,
                             tau: float = 1.0):
    """Mean cross-entropy of softmax(logits / tau) against hard labels."""
    logits, labels = _check_logits_labels(logits, labels)
    n = logits.shape[0]
    probs = softmax(logits, tau)
    loss = float(np.mean(-np.log(probs[np.arange(n), labels])))
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    return loss, d / (n * tau)


def distillation_loss(student_logits: np.ndarray,
                      teacher_logits: np.ndarray) -> float:
    loss, _ = distillation_loss_grad(student_logits, teacher_logits)
    return loss


def distillation_loss_grad(student_logits: np.ndarray,
                           teacher_logits: np.ndarray):
    """Soft-target cross-entropy; the teacher is a constant (no gradient).

    Returns (loss, d_loss/d_student). The loss is bounded below by the
    teacher's softmax entropy, with equality iff the distributions match.
    """
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 2:
        raise ShapeMismatch(
            f"student {s.shape} and teacher {t.shape} logits must be equal NxK")
    n = s.shape[0]
    q = softmax(t)
    log_p = s - s.max(axis=1, keepdims=True)
    log_p = log_p - np.log(np.exp(log_p).sum(axis=1, keepdims=True))
    loss = float(np.mean(-(q * log_p).sum(axis=1)))
    p = np.exp(log_p)
    return loss, (p - q) / n


def alignment_loss(features: np.ndarray, proj_w: np.ndarray,
                   bank_matrix: np.ndarray, labels: np.ndarray,
                   tau_align: float) -> float:
    loss, _, _ = alignment_loss_grad(features, proj_w, bank_matrix, labels, tau_align)
    return loss


def alignment_loss_grad(features: np.ndarray, proj_w: np.ndarray,
                        bank_matrix: np.ndarray, labels: np.ndarray,
                        tau_align: float):
    """Cosine-against-text-bank cross-entropy.

    Features are projected by the bias-free ``proj_w``, L2-normalized, then
    scored against every (unit-norm) bank row; the per-sample cosine vector
    over classes goes through a temperature softmax and cross-entropy at the
    sample's class label. Returns (loss, d_features, d_proj_w). Exactly
    invariant to positive rescaling of any input feature.
    """
    f = np.asarray(features, dtype=np.float64)
    w = np.asarray(proj_w, dtype=np.float64)
    bank = np.asarray(bank_matrix, dtype=np.float64)
    if f.ndim != 2 or w.ndim != 2 or f.shape[1] != w.shape[0]:
        raise ShapeMismatch(
            f"features {f.shape} do not match projector {w.shape}")
    if bank.ndim != 2 or bank.shape[1] != w.shape[1]:
        raise ShapeMismatch(
            f"bank {bank.shape} does not match projector output {w.shape[1]}")
    norms = np.linalg.norm(bank, axis=1)
    if not np.all(np.abs(norms - 1.0) <= 1e-5):
        raise NotNormalizedBank("bank rows must be unit-norm")
    labels = np.asarray(labels)
    if labels.shape != (f.shape[0],):
        raise ShapeMismatch(
            f"labels shape {labels.shape} does not match batch {f.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= bank.shape[0]):
        raise LabelOutOfRange("labels must index bank rows")
    labels = labels.astype(np.intp)

    n = f.shape[0]
    proj = f @ w
    pn = np.linalg.norm(proj, axis=1, keepdims=True)
    if np.any(pn == 0.0):
        raise ZeroVector("a projected feature has zero norm")
    unit = proj / pn
    cos = unit @ bank.T
    probs = softmax(cos, tau_align)
    loss = float(np.mean(-np.log(probs[np.arange(n), labels])))

    d_cos = probs.copy()
    d_cos[np.arange(n), labels] -= 1.0
    d_cos /= n * tau_align
    d_unit = d_cos @ bank
    # through y = p / |p|:  dp = (dy - y (y . dy)) / |p|
    d_proj = (d_unit - unit * (unit * d_unit).sum(axis=1, keepdims=True)) / pn
    d_features = d_proj @ w.T
    d_proj_w = f.T @ d_proj
    return loss, d_features, d_proj_w


def total_loss(align: float, distill: float, cfg: LossConfig) -> float:
    """Weighted sum of the two objective terms."""
    cfg.validate()
    if not (np.isfinite(align) and np.isfinite(distill)):
        raise NonFinite("loss terms must be finite")
    return float(align + cfg.lam * distill)
