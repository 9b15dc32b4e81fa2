"""L1 magnitude and entropy of edge activations, with their gradients.

Edge magnitudes are means of ``|phi|`` over the batch. A layer's entropy is
taken over the magnitudes normalised to a distribution (natural log).
"""
import numpy as np


def edge_magnitudes(phi):
    """(N, n_out, n_in) edge outputs -> (n_out, n_in) mean absolute values."""
    return np.abs(phi).mean(axis=0)


def entropy(m):
    """Entropy of magnitudes ``m``. Returns (S, degenerate)."""
    total = m.sum()
    if total <= 0.0:
        return 0.0, True
    p = m / total
    p = p[p > 0]  # subnormal magnitudes can underflow to 0 here
    return float(-(p * np.log(p)).sum()), False


def entropy_grad(m):
    """dS/dm for every magnitude; zero where m == 0 or the layer is dead."""
    total = m.sum()
    grad = np.zeros_like(m)
    if total <= 0.0:
        return grad
    S, _ = entropy(m)
    p = m / total
    live = p > 0
    grad[live] = (-np.log(p[live]) - S) / total
    return grad


def layer_terms(phi):
    """(l1, entropy, degenerate) for one layer's batch of edge outputs."""
    m = edge_magnitudes(phi)
    S, degenerate = entropy(m)
    return float(m.sum()), S, degenerate


def phi_grad(phi, lam, mu1, mu2):
    """Gradient of ``lam * (mu1 * |Phi|_1 + mu2 * S(Phi))`` w.r.t. each phi value."""
    n = phi.shape[0]
    m = edge_magnitudes(phi)
    dm = lam * (mu1 + mu2 * entropy_grad(m))
    return np.sign(phi) * (dm / n)[None, :, :]
