"""Training objectives.

All classifier-side losses take softmax probabilities and return the scalar
value plus the gradient with respect to the logits, using sum (not mean)
reduction over the batch. The kernel two-sample objective for the generator
returns a gradient with respect to the fake embeddings instead. Logs are
floored at EPS; so are the per-class probability masses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .numerics import as_matrix, gaussian_kernel_matrix, log_sum_exp

EPS = 1e-12


def make_prior(values, num_classes=None) -> np.ndarray:
    """Validate a class prior: 1-D, nonnegative, sums to 1 within 1e-9."""
    p = np.asarray(values, dtype=np.float64).ravel()
    if num_classes is not None and p.size != num_classes:
        raise ContractViolation(f"prior has {p.size} entries, expected {num_classes}")
    if p.size < 1:
        raise ContractViolation("prior must be nonempty")
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise ContractViolation("prior entries must be finite and >= 0")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise ContractViolation(f"prior sums to {p.sum()!r}, expected 1")
    return p


def _check_probs(probs) -> np.ndarray:
    p = as_matrix(probs, "probs")
    if p.shape[0] < 1 or p.shape[1] < 1:
        raise ContractViolation("probs must be nonempty")
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise ContractViolation("probs entries must be finite and >= 0")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ContractViolation("probs rows must sum to 1 (valid softmax output)")
    return p


def _check_labels(labels, b, k) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != b:
        raise ContractViolation(f"labels must be 1-D of length {b}")
    y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= k):
        raise ContractViolation(f"labels out of range [0, {k})")
    return y


@dataclass
class LossReport:
    """One term's scalar value, its gradient, and diagnostic numbers."""

    name: str
    value: float
    grad_logits: np.ndarray | None = None
    grad_embeddings: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def source_ce(probs, labels) -> LossReport:
    """Supervised cross-entropy, summed over the batch.

    d/d(logits) = probs - onehot(labels).
    """
    p = _check_probs(probs)
    b, k = p.shape
    y = _check_labels(labels, b, k)
    rows = np.arange(b)
    value = -float(np.log(np.maximum(p[rows, y], EPS)).sum())
    grad = p.copy()
    grad[rows, y] -= 1.0
    return LossReport("source_ce", value, grad_logits=grad)


def class_mass(probs) -> np.ndarray:
    """Per-class probability mass over the batch: column sums of probs."""
    return _check_probs(probs).sum(axis=0)


@dataclass
class PseudoLabels:
    """Selected labels plus the score table they were picked from."""

    labels: np.ndarray  # (b,) int64
    scores: np.ndarray  # (b, k)


def pseudo_label_select(probs, prior) -> PseudoLabels:
    """Pick y_j maximizing probs[j, y] * prior[y] / class_mass[y].

    Ties resolve to the lowest class index (argmax convention). Selection is
    a discrete choice: no gradient flows through it.
    """
    p = _check_probs(probs)
    pri = make_prior(prior, p.shape[1])
    mass = np.maximum(p.sum(axis=0), EPS)
    scores = p * (pri / mass)[None, :]
    return PseudoLabels(scores.argmax(axis=1).astype(np.int64), scores)


def contradist_loss(probs, pseudo: PseudoLabels, prior) -> LossReport:
    """Prior-enforcing objective on an unlabeled batch, as a minimization.

    The maximized quantity is
        V = sum_j log probs[j, y_j] + sum_j log prior[y_j]
            - sum_j log class_mass[y_j]
    with y_j the fixed pseudo-labels; the report carries value = V and the
    gradient of -V w.r.t. the logits. The middle term has no logits gradient.
    """
    p = _check_probs(probs)
    b, k = p.shape
    y = _check_labels(pseudo.labels, b, k)
    pri = make_prior(prior, k)
    rows = np.arange(b)

    logp = np.log(np.maximum(p, EPS))
    term1 = float(logp[rows, y].sum())
    term2 = float(np.log(np.maximum(pri, EPS))[y].sum())
    # per-class log-mass via log-sum-exp over the column's log-probabilities
    logmass = np.array([log_sum_exp(logp[:, c]) for c in range(k)])
    term3 = float(logmass[y].sum())
    # grouped so the b=1 case cancels to exactly term2
    value = (term1 - term3) + term2

    counts = np.bincount(y, minlength=k).astype(np.float64)
    mass = np.maximum(p.sum(axis=0), EPS)
    onehot = np.zeros_like(p)
    onehot[rows, y] = 1.0
    weighted = (p / mass[None, :]) * counts[None, :]
    srow = weighted.sum(axis=1, keepdims=True)
    # d(-V)/d(logits); grouped so every term pairs with its exact cancel
    # partner when b=1 (weighted == onehot and srow == 1 there)
    grad = (p + weighted) - (onehot + p * srow)
    return LossReport(
        "contradist",
        value,
        grad_logits=grad,
        diagnostics={"term_logprob": term1, "term_logprior": term2, "term_logmass": term3},
    )


def adv_bce(probs_fake) -> LossReport:
    """Push fake rows toward the uniform prediction: -sum_j sum_k log p[j, k].

    Per-sample minimum is k*ln(k), attained exactly at the uniform row.
    d/d(logits) = k * p - 1.
    """
    p = _check_probs(probs_fake)
    k = p.shape[1]
    value = -float(np.log(np.maximum(p, EPS)).sum())
    grad = k * p - 1.0
    return LossReport("adv_bce", value, grad_logits=grad)


def mmd_loss(emb_fake, emb_real, gamma: float) -> LossReport:
    """Biased (V-statistic) squared MMD with a Gaussian kernel.

    value = mean k(f,f) + mean k(r,r) - 2 mean k(f,r). The gradient is with
    respect to the fake embeddings only; the real side is a constant.
    """
    f = as_matrix(emb_fake, "emb_fake")
    r = as_matrix(emb_real, "emb_real")
    if f.shape[1] != r.shape[1]:
        raise ContractViolation(f"mmd: widths differ ({f.shape[1]} vs {r.shape[1]})")
    if f.shape[0] < 1 or r.shape[0] < 1:
        raise ContractViolation("mmd: inputs must be nonempty")
    nf, nr = f.shape[0], r.shape[0]
    kff = gaussian_kernel_matrix(f, f, gamma)
    krr = gaussian_kernel_matrix(r, r, gamma)
    kfr = gaussian_kernel_matrix(f, r, gamma)
    value = float(kff.sum()) / (nf * nf) + float(krr.sum()) / (nr * nr) - 2.0 * float(kfr.sum()) / (nf * nr)

    # d value / d f_i, using d k(a,b)/d a = -2 gamma (a - b) k(a,b)
    row_ff = kff.sum(axis=1, keepdims=True)
    row_fr = kfr.sum(axis=1, keepdims=True)
    grad = (-4.0 * gamma / (nf * nf)) * (f * row_ff - kff @ f)
    grad += (4.0 * gamma / (nf * nr)) * (f * row_fr - kfr @ r)
    return LossReport(
        "mmd",
        value,
        grad_embeddings=grad,
        diagnostics={"gamma": float(gamma), "k_ff": float(kff.mean()), "k_rr": float(krr.mean()), "k_fr": float(kfr.mean())},
    )


def median_heuristic_gamma(emb_real) -> float:
    """gamma = 1 / (2 * median pairwise squared distance), floored at EPS scale.

    Median is over unordered pairs i < j of the real rows. A single row (no
    pairs) or an all-identical batch falls back to gamma = 1.
    """
    r = as_matrix(emb_real, "emb_real")
    n = r.shape[0]
    if n < 2:
        return 1.0
    diff = r[:, None, :] - r[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(sq[iu]))
    if med <= EPS:
        return 1.0
    return 1.0 / (2.0 * med)
