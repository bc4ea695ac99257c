"""Independent reference computations used by the unit and acceptance tests.

Each oracle is written the slow, direct way (explicit matrices, Python loops)
so that it shares no code path with the implementation it checks.
"""

import math

import numpy as np


def projection_response(B_list, x):
    """Squared projection via the dense projector ``B B^T`` per node."""
    return np.array([float(x @ (B @ B.T) @ x) for B in B_list])


def span_projector(B):
    """Projector onto the column space of ``B`` by least squares."""
    coef, *_ = np.linalg.lstsq(B, np.eye(B.shape[0]), rcond=None)
    return B @ coef


def transition_matrix(R, rho):
    """Explicit R x R matrix: jump uniformly with probability rho, else stay."""
    A = np.empty((R, R))
    for c in range(R):
        for d in range(R):
            A[c, d] = rho / R + (1.0 - rho) * (1.0 if c == d else 0.0)
    return A


def hmm_forward(B_list, X, rhos, kappa, gamma0=None):
    """Textbook forward recursion ``alpha_t = (A^T alpha_{t-1}) * e_t``, normalized each step."""
    R = len(B_list)
    alpha = np.full(R, 1.0 / R) if gamma0 is None else np.array(gamma0, dtype=float)
    out = []
    for x, rho in zip(X, rhos):
        A = transition_matrix(R, rho)
        e = np.array([math.exp(kappa * float(x @ B @ B.T @ x)) for B in B_list])
        pred = A.T @ alpha
        alpha = pred * e
        alpha = alpha / alpha.sum()
        out.append(alpha)
    return out


def gaussian_neighborhood(lattice, sigma):
    """Row-normalized isotropic Gaussian densities with covariance ``sigma * I``."""
    R = len(lattice)
    g = np.empty((R, R))
    for n in range(R):
        row = []
        for m in range(R):
            d2 = sum((float(a) - float(b)) ** 2 for a, b in zip(lattice[m], lattice[n]))
            row.append(math.exp(-d2 / (2.0 * sigma)) / (2.0 * math.pi * sigma))
        total = sum(row)
        g[n] = [v / total for v in row]
    return g


def random_orthonormal(rng, D, H):
    Q, _ = np.linalg.qr(rng.standard_normal((D, H)))
    return Q


def unit(rng, D):
    v = rng.standard_normal(D)
    return v / np.linalg.norm(v)
