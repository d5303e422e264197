"""Shared numerical primitives: seeded randomness, perturbation noise,
Boolean matrix products, and non-negative least squares.

All matrices are plain float64 numpy arrays in row-major order. Boolean
matrices are float64 arrays whose entries are exactly 0.0 or 1.0; masks are
float64 arrays with entries in [0, 1] (binary in every shipped experiment).
"""

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RandomSource:
    """Deterministic random stream keyed by (seed, stream).

    Every call to generator() starts the stream from scratch, so the same
    RandomSource always reproduces the same draws bit for bit. Distinct
    stream ids on the same seed give statistically independent streams.
    """

    seed: int
    stream: int = 0

    def generator(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, offset):
        return RandomSource(self.seed, self.stream + offset)


def as_matrix(X, name="X"):
    A = np.asarray(X, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("%s must be 2-dimensional, got ndim=%d" % (name, A.ndim))
    return A


def is_boolean(X):
    A = np.asarray(X)
    return bool(np.all((A == 0) | (A == 1)))


def as_boolean_matrix(X, name="X"):
    A = as_matrix(X, name)
    if not is_boolean(A):
        raise TypeError("%s must contain only 0/1 entries" % name)
    return A


def as_mask(M, shape, name="M"):
    A = as_matrix(M, name)
    if A.shape != tuple(shape):
        raise ValueError("%s has shape %s, expected %s" % (name, A.shape, tuple(shape)))
    if np.any(A < 0) or np.any(A > 1):
        raise ValueError("%s entries must lie in [0, 1]" % name)
    return A


def relative_error(X, W, H):
    """Squared relative reconstruction error ||X - WH||_F^2 / ||X||_F^2."""
    X = as_matrix(X)
    W = as_matrix(W, "W")
    H = as_matrix(H, "H")
    if W.shape[0] != X.shape[0] or H.shape[1] != X.shape[1] or W.shape[1] != H.shape[0]:
        raise ValueError("nonconforming shapes %s, %s, %s" % (X.shape, W.shape, H.shape))
    nx = float(np.sum(X * X))
    if nx == 0.0:
        raise ValueError("relative error undefined for all-zero X")
    diff = X - W @ H
    return float(np.sum(diff * diff)) / nx


def relative_residual(X, Xhat):
    """Unsquared residual ratio ||X - Xhat||_F / ||X||_F."""
    X = as_matrix(X)
    Xhat = as_matrix(Xhat, "Xhat")
    nx = float(np.linalg.norm(X))
    if nx == 0.0:
        raise ValueError("relative residual undefined for all-zero X")
    return float(np.linalg.norm(X - Xhat)) / nx


def perturb_uniform(X, epsilon, rng):
    """Multiplicative resampling: Y = X * (1 - eps + 2*eps*u), u ~ U[0,1).

    Zeros of X stay zero, every other entry moves by at most a factor eps.
    """
    X = as_matrix(X)
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1), got %r" % (epsilon,))
    u = rng.generator().random(X.shape)
    return X * (1.0 - epsilon + 2.0 * epsilon * u)


def perturb_boolean(X, eps_pos, eps_neg, rng):
    """Flip an exact count of entries of a Boolean matrix.

    Exactly round(eps_pos * #zeros) zeros become ones and
    round(eps_neg * #ones) ones become zeros, chosen uniformly without
    replacement. Exact counts keep the noise magnitude deterministic per
    seed, which the ensemble aggregation relies on.
    """
    X = as_boolean_matrix(X)
    if not (0.0 <= eps_pos < 1.0) or not (0.0 <= eps_neg < 1.0):
        raise ValueError("flip fractions must lie in [0, 1)")
    flat = X.ravel().copy()
    zeros = np.flatnonzero(flat == 0.0)
    ones = np.flatnonzero(flat == 1.0)
    n_pos = int(round(eps_pos * zeros.size))
    n_neg = int(round(eps_neg * ones.size))
    gen = rng.generator()
    if n_pos > 0:
        flat[gen.choice(zeros, size=n_pos, replace=False)] = 1.0
    if n_neg > 0:
        flat[gen.choice(ones, size=n_neg, replace=False)] = 0.0
    return flat.reshape(X.shape)


def boolean_matmul(W, H):
    """Boolean product: out(i,j) = OR_k (W(i,k) AND H(k,j))."""
    W = as_boolean_matrix(W, "W")
    H = as_boolean_matrix(H, "H")
    if W.shape[1] != H.shape[0]:
        raise ValueError("inner dimensions %d and %d differ" % (W.shape[1], H.shape[0]))
    return (W @ H >= 1.0).astype(np.float64)


def nnls_regress(X, W, max_iters=500, tol=1e-8):
    """Column-wise non-negative regression of H in min ||X - WH||_F^2.

    Multiplicative updates with W fixed; provably non-increasing objective.
    X is clamped to be non-negative before the fit. Zero columns of W are
    degenerate and produce all-zero rows of H.
    """
    X = as_matrix(X)
    W = as_matrix(W, "W")
    if W.shape[0] != X.shape[0]:
        raise ValueError("W has %d rows, X has %d" % (W.shape[0], X.shape[0]))
    if np.any(W < 0):
        raise ValueError("W must be non-negative")
    Xc = np.maximum(X, 0.0)
    k = W.shape[1]
    col_norm = np.sqrt((W * W).sum(axis=0))
    dead = col_norm == 0.0
    if np.any(dead):
        warnings.warn("nnls_regress: zero column(s) in W, matching H rows set to 0",
                      stacklevel=2)
    Wa = W[:, ~dead]
    H = np.zeros((k, X.shape[1]))
    if Wa.shape[1] > 0:
        Ha = (Wa.T @ Xc) / ((Wa * Wa).sum(axis=0)[:, None] + 1e-12)
        WtX = Wa.T @ Xc
        WtW = Wa.T @ Wa
        prev = None
        for _ in range(max_iters):
            denom = WtW @ Ha + 1e-12
            Ha *= WtX / denom
            diff = Xc - Wa @ Ha
            obj = float(np.sum(diff * diff))
            if prev is not None and abs(prev - obj) <= tol * max(prev, 1e-300):
                break
            prev = obj
        H[~dead, :] = Ha
    return H
