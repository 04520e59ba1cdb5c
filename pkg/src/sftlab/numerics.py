"""Log-space probability primitives shared by every objective.

All distribution math in this package runs in float64 log space; probabilities
are materialized with exp() only at boundaries (sampling, reporting, probe
output). Log-probabilities are floored at LOG_FLOOR instead of -inf so that
products like p * log p evaluate to ~0 rather than nan when a token's
probability underflows.
"""

from __future__ import annotations

import numpy as np

# exp(LOG_FLOOR) is the smallest positive denormal; anything below underflows to 0.
LOG_FLOOR = -745.0


def as_logits(z) -> np.ndarray:
    """Validate an unnormalized logit vector: float64, 1-d, length >= 2, finite."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"logits must be a 1-d vector, got shape {z.shape}")
    if z.size < 2:
        raise ValueError(f"logits need at least 2 entries, got {z.size}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return z


def as_log_probs(l) -> np.ndarray:
    """Validate a log-probability vector: entries <= 0, logsumexp within 1e-9 of 0."""
    l = np.asarray(l, dtype=np.float64)
    if l.ndim != 1 or l.size < 2:
        raise ValueError(f"log-probs must be a 1-d vector of length >= 2, got shape {l.shape}")
    if np.any(l > 1e-12):
        raise ValueError(f"log-probs must be <= 0, max entry {l.max()}")
    lse = logsumexp(l)
    if abs(lse) > 1e-9:
        raise ValueError(f"log-probs must normalize: logsumexp = {lse}")
    return np.minimum(l, 0.0)


def as_probs(p) -> np.ndarray:
    """Validate a probability vector: entries in [0, 1], sum within 1e-9 of 1."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError(f"probabilities must be a 1-d vector, got shape {p.shape}")
    if np.any(p < -1e-12) or np.any(p > 1.0 + 1e-12):
        raise ValueError("probabilities must lie in [0, 1]")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"probabilities must sum to 1, got {total}")
    return np.clip(p, 0.0, 1.0)


def check_temperature(beta) -> float:
    """Temperatures live in (0, 1]; beta = 1 is the identity and is admitted."""
    beta = float(beta)
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"temperature must lie in (0, 1], got {beta}")
    return beta


def logsumexp(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    m = float(x.max())
    return m + float(np.log(np.exp(x - m).sum()))


def log_softmax(z) -> np.ndarray:
    """Normalized log-probabilities of a logit vector, floored at LOG_FLOOR.

    Max-subtraction guarantees every output entry is <= 0 exactly, and the
    floor never disturbs normalization beyond a few denormals.
    """
    z = as_logits(z)
    shifted = z - z.max()
    out = shifted - np.log(np.exp(shifted).sum())
    return np.maximum(out, LOG_FLOOR)


def tempered_log_softmax(l, beta) -> np.ndarray:
    """Log-probabilities of the tempered distribution softmax(l / beta).

    Dividing log-probabilities by beta < 1 sharpens the distribution; beta = 1
    returns l unchanged up to rounding. Equivalent to tempering the underlying
    logits, since the shared logsumexp shift cancels.
    """
    l = as_log_probs(l)
    beta = check_temperature(beta)
    s = l / beta
    s = s - s.max()
    out = s - np.log(np.exp(s).sum())
    return np.maximum(out, LOG_FLOOR)


def temper(l, beta) -> np.ndarray:
    """Tempered probabilities softmax(l / beta) as a materialized vector."""
    return np.exp(tempered_log_softmax(l, beta))


def logit_jacobian_row(l, i) -> np.ndarray:
    """Row i of d log_softmax / d logits: delta_ij - p_j."""
    l = as_log_probs(l)
    if not 0 <= int(i) < l.size:
        raise IndexError(f"row index {i} out of range for size {l.size}")
    row = -np.exp(l)
    row[int(i)] += 1.0
    return row


def entropy_from_log_probs(l) -> float:
    """Shannon entropy in nats, H = -sum p * l, safe at floored entries."""
    l = as_log_probs(l)
    return float(-np.dot(np.exp(l), l))


def entropy_logit_gradient(l) -> np.ndarray:
    """dH/dz_j = -p_j (l_j - sum_i l_i p_i).

    Derived by composing dH/dl_i = -(l_i + 1) p_i with the log-softmax
    jacobian; the +1 terms cancel. Each component carries a factor p_j, so the
    gradient stays bounded as any probability vanishes: no 1/p explosion.
    """
    l = as_log_probs(l)
    p = np.exp(l)
    mean_log = float(np.dot(l, p))
    return -p * (l - mean_log)
