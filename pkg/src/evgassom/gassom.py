"""Generative Adaptive Subspace SOM.

A bank holds ``R`` subspaces of dimension ``H`` in ``R^D`` laid out on a
``side x side`` lattice. Each sample gets

* a response per node, the squared length of its projection,
* a posterior over nodes from an HMM forward recursion whose transition
  matrix mixes "stay" with "jump uniformly" depending on the time since the
  previous sample (slowness),
* a competitive update: the posterior's winner and its lattice neighbours
  rotate their subspaces toward the sample, then are re-orthonormalized.

Bases are stored as ``(R, H, D)`` arrays, i.e. ``bases[r]`` is ``B_r``
transposed; this is also the on-disk order of the GSB1 format.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import (
    BankShapeMismatch,
    FormatError,
    HExceedsD,
    NotPerfectSquare,
    NumericalUnderflow,
    RankDeficient,
    TimestampRegression,
)

# Nodes whose neighbourhood weight is below this are skipped by update_step;
# their change would be under 1e-12 per entry.
_H_EPS = 1e-12
_RANK_EPS = 1e-10


@dataclass
class SubspaceBank:
    bases: np.ndarray  # (R, H, D), each bases[r] has orthonormal rows
    side: int

    def __post_init__(self):
        self.bases = np.ascontiguousarray(self.bases, dtype=np.float64)
        if self.bases.ndim != 3:
            raise ValueError("bases must have shape (R, H, D)")
        if self.side * self.side != self.bases.shape[0]:
            raise NotPerfectSquare(f"R={self.bases.shape[0]} is not side^2 with side={self.side}")

    @property
    def R(self) -> int:
        return self.bases.shape[0]

    @property
    def H(self) -> int:
        return self.bases.shape[1]

    @property
    def D(self) -> int:
        return self.bases.shape[2]

    @property
    def lattice(self) -> np.ndarray:
        """(R, 2) integer lattice coordinates, node ``r`` at ``(r % side, r // side)``."""
        r = np.arange(self.R)
        return np.stack([r % self.side, r // self.side], axis=1)

    def basis(self, r: int) -> np.ndarray:
        """``B_r`` as a D x H matrix."""
        return self.bases[r].T

    def copy(self) -> "SubspaceBank":
        return SubspaceBank(self.bases.copy(), self.side)

    def max_orthonormality_error(self) -> float:
        gram = self.bases @ self.bases.transpose(0, 2, 1)
        return float(np.linalg.norm(gram - np.eye(self.H), axis=(1, 2)).max())


@dataclass
class LatentPosterior:
    gamma: np.ndarray
    t_prev: int | None = None

    @classmethod
    def uniform(cls, R: int) -> "LatentPosterior":
        return cls(np.full(R, 1.0 / R))


@dataclass(frozen=True)
class EmissionModel:
    """Likelihood ``p(x | node r) ~ exp(kappa * ||B_r^T x||^2)``.

    For unit-norm samples with Gaussian noise orthogonal to the subspace the
    log-likelihood is affine in the residual ``1 - ||B_r^T x||^2``, which is
    this form with ``kappa`` absorbing the noise scale.
    """

    kappa: float = 20.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")


@dataclass(frozen=True)
class NeighborhoodMatrix:
    g: np.ndarray
    sigma: float


def _integer_sqrt(R: int) -> int:
    side = math.isqrt(R)
    if side * side != R:
        raise NotPerfectSquare(f"number of subspaces {R} is not a perfect square")
    return side


def orthonormalize(B: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the columns of a D x H matrix, in column order."""
    B = np.array(B, dtype=np.float64)
    Q = np.empty_like(B)
    for h in range(B.shape[1]):
        v = B[:, h].copy()
        scale = max(np.linalg.norm(v), 1.0)
        for j in range(h):
            v -= (Q[:, j] @ v) * Q[:, j]
        n = np.linalg.norm(v)
        if n < _RANK_EPS * scale:
            raise RankDeficient(f"column {h} is (nearly) in the span of the previous columns")
        Q[:, h] = v / n
    return Q


def _orthonormalize_rows(B: np.ndarray) -> np.ndarray:
    """Vectorized modified Gram-Schmidt over the rows of a stack ``(n, H, D)``."""
    B = B.copy()
    for h in range(B.shape[1]):
        v = B[:, h]
        for j in range(h):
            v -= np.einsum("nd,nd->n", B[:, j], v)[:, None] * B[:, j]
        n = np.sqrt(np.einsum("nd,nd->n", v, v))
        if np.any(n < _RANK_EPS):
            raise RankDeficient("update collapsed a subspace basis")
        v /= n[:, None]
    return B


def init_bank(R: int, D: int, H: int = 2, seed: int = 0) -> SubspaceBank:
    side = _integer_sqrt(R)
    if H > D:
        raise HExceedsD(f"subspace dimension {H} exceeds input dimension {D}")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((R, D, H)).transpose(0, 2, 1)
    return SubspaceBank(_orthonormalize_rows(raw), side)


def response(bank: SubspaceBank, x: np.ndarray) -> np.ndarray:
    """Squared projection length of ``x`` onto each subspace, shape (R,)."""
    c = bank.bases @ x
    return np.einsum("rh,rh->r", c, c)


def responses(bank: SubspaceBank, X: np.ndarray) -> np.ndarray:
    """Batched ``response``: (N, D) samples -> (N, R)."""
    c = np.einsum("rhd,nd->nrh", bank.bases, X, optimize=True)
    return np.einsum("nrh,nrh->nr", c, c)


def classify_event(bank: SubspaceBank, x: np.ndarray) -> int:
    """Index of the largest response; ties go to the lowest index."""
    return int(np.argmax(response(bank, x)))


def transition_mix(t_j: float, t_prev: float | None, tau_s: float) -> float:
    """Probability mass moved to the uniform jump for a gap ``t_j - t_prev``."""
    if t_prev is None:
        return 1.0
    if t_j < t_prev:
        raise TimestampRegression(f"t={t_j} precedes previous output at {t_prev}")
    return -math.expm1(-(t_j - t_prev) / tau_s)


def forward_step(
    bank: SubspaceBank,
    posterior: LatentPosterior,
    x: np.ndarray,
    rho: float,
    emission: EmissionModel,
    t: int | None = None,
    resp: np.ndarray | None = None,
) -> LatentPosterior:
    """One forward-algorithm update of the node posterior.

    The transition matrix ``rho/R + (1 - rho) I`` is never formed: its
    product with the previous posterior is ``rho/R + (1 - rho) gamma``.
    """
    if resp is None:
        resp = response(bank, x)
    prior = rho / bank.R + (1.0 - rho) * posterior.gamma
    with np.errstate(divide="ignore"):
        logp = np.log(prior) + emission.kappa * resp
    m = logp.max()
    if not np.isfinite(m):
        raise NumericalUnderflow("forward normalizer vanished")
    w = np.exp(logp - m)
    return LatentPosterior(w / w.sum(), posterior.t_prev if t is None else t)


def neighborhood_matrix(lattice: np.ndarray, sigma: float) -> NeighborhoodMatrix:
    """Row-normalized isotropic Gaussian over lattice distance, covariance ``sigma * I``."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    lattice = np.asarray(lattice, dtype=np.float64)
    d2 = ((lattice[:, None, :] - lattice[None, :, :]) ** 2).sum(-1)
    logits = -d2 / (2.0 * sigma)
    logits -= logits.max(axis=1, keepdims=True)
    g = np.exp(logits)
    g /= g.sum(axis=1, keepdims=True)
    return NeighborhoodMatrix(g, float(sigma))


def winner_take_all(gamma: np.ndarray) -> np.ndarray:
    out = np.zeros_like(gamma)
    out[int(np.argmax(gamma))] = 1.0
    return out


@numba.njit(cache=True, nogil=True)
def _update_kernel(bases, x, h, learning_rate, x_norm, h_eps, rank_eps):
    """In-place update + Gram-Schmidt of every node with ``h[r] > h_eps``.

    Returns the index of a node whose basis collapsed, or -1.
    """
    R, H, D = bases.shape
    c = np.empty(H)
    resid = np.empty(D)
    for r in range(R):
        if h[r] <= h_eps:
            continue
        B = bases[r]
        for k in range(H):
            acc = 0.0
            for d in range(D):
                acc += B[k, d] * x[d]
            c[k] = acc
        rn = 0.0
        for d in range(D):
            v = x[d]
            for k in range(H):
                v -= c[k] * B[k, d]
            resid[d] = v
            rn += v * v
        rn = math.sqrt(rn)
        if rn < 1e-12:
            continue
        coef = learning_rate * h[r] / (rn * x_norm)
        for k in range(H):
            ck = coef * c[k]
            for d in range(D):
                B[k, d] += ck * resid[d]
        for k in range(H):
            for j in range(k):
                acc = 0.0
                for d in range(D):
                    acc += B[j, d] * B[k, d]
                for d in range(D):
                    B[k, d] -= acc * B[j, d]
            n = 0.0
            for d in range(D):
                n += B[k, d] * B[k, d]
            n = math.sqrt(n)
            if n < rank_eps:
                return r
            for d in range(D):
                B[k, d] /= n
    return -1


def update_step(
    bank: SubspaceBank,
    x: np.ndarray,
    gamma: np.ndarray,
    G: NeighborhoodMatrix,
    learning_rate: float,
) -> SubspaceBank:
    """Move the winner and its neighbours toward ``x``; modifies ``bank`` in place.

    Node ``r`` gets ``h_r * xt_r (x^T B_r) / (|xt_r| |x|)`` added to its basis,
    where ``xt_r`` is the residual of projecting ``x`` onto the subspace and
    ``h = G @ WTA(gamma)``; the basis is then re-orthonormalized. Nodes whose
    residual vanishes are left alone.
    """
    h = np.ascontiguousarray(G.g[:, int(np.argmax(gamma))])
    x = np.ascontiguousarray(x, dtype=np.float64)
    bad = _update_kernel(bank.bases, x, h, float(learning_rate), float(np.linalg.norm(x)), _H_EPS, _RANK_EPS)
    if bad >= 0:
        raise RankDeficient(f"update collapsed the basis of node {bad}")
    return bank


@dataclass
class Schedule:
    """Exponential decay from an initial to a final value over ``total`` updates."""

    initial: float
    final: float
    total: int

    def __call__(self, n: int) -> float:
        if self.total <= 0:
            return self.initial
        frac = min(n, self.total) / self.total
        return self.initial * (self.final / self.initial) ** frac


@dataclass
class GassomLearner:
    """Stateful trainer: owns the learning-rate and neighbourhood schedules.

    ``G`` is rebuilt only when sigma has drifted by more than 1% since the
    cached matrix.
    """

    bank: SubspaceBank
    emission: EmissionModel
    learning_rate: Schedule
    sigma: Schedule
    steps: int = 0
    _G: NeighborhoodMatrix | None = field(default=None, repr=False)

    def neighborhood(self) -> NeighborhoodMatrix:
        s = self.sigma(self.steps)
        if self._G is None or abs(s - self._G.sigma) > 0.01 * self._G.sigma:
            self._G = neighborhood_matrix(self.bank.lattice, s)
        return self._G

    def step(self, x: np.ndarray, gamma: np.ndarray) -> None:
        update_step(self.bank, x, gamma, self.neighborhood(), self.learning_rate(self.steps))
        self.steps += 1


# --- GSB1 serialization ------------------------------------------------------

GSB_MAGIC = b"GSB1"
_GSB_HEADER = struct.Struct("<4sIIII")


def encode_bank(bank: SubspaceBank) -> bytes:
    body = _GSB_HEADER.pack(GSB_MAGIC, bank.R, bank.D, bank.H, bank.side)
    body += bank.bases.astype("<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_bank(data: bytes, expected_dim: int | None = None) -> SubspaceBank:
    data = bytes(data)
    if len(data) < _GSB_HEADER.size + 4:
        raise FormatError("bank file too short", offset=len(data))
    magic, R, D, H, side = _GSB_HEADER.unpack_from(data, 0)
    if magic != GSB_MAGIC:
        raise FormatError(f"bad bank magic {magic!r}", offset=0)
    n = R * D * H * 8
    if len(data) != _GSB_HEADER.size + n + 4:
        raise FormatError(f"bank payload length mismatch for R={R}, D={D}, H={H}", offset=_GSB_HEADER.size)
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if crc != zlib.crc32(data[:-4]):
        raise FormatError("bank CRC32 mismatch", offset=len(data) - 4)
    if expected_dim is not None and D != expected_dim:
        raise BankShapeMismatch(f"bank has D={D}, layer expects D={expected_dim}")
    bases = np.frombuffer(data, "<f8", count=R * D * H, offset=_GSB_HEADER.size).reshape(R, H, D)
    return SubspaceBank(bases.astype(np.float64), side)


def save_bank(path, bank: SubspaceBank) -> None:
    Path(path).write_bytes(encode_bank(bank))


def load_bank(path, expected_dim: int | None = None) -> SubspaceBank:
    return decode_bank(Path(path).read_bytes(), expected_dim)
