"""Synthetic data generators, an interaction edge-list loader, and
stratified train/test splitting.

The two image-like Boolean sets are procedural (no RNG): a 20x20 four-motif
set whose 16 columns enumerate every OR-combination of the motifs, and a
32x32 torso-plus-limbs set whose 256 columns enumerate the four positions
of four quadrant-disjoint limbs. The Gaussian and planted-Boolean sets are
seeded. Splits draw from stream 10_000_000 + fold of the experiment seed so
folds are reproducible in isolation.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import RandomSource, as_mask, as_matrix, boolean_matmul, is_boolean

SPLIT_STREAM = 10_000_000


@dataclass
class GroundTruth:
    X: np.ndarray
    W: np.ndarray
    H: np.ndarray
    rank: int


@dataclass
class SplitResult:
    M_train: np.ndarray
    X_train: np.ndarray
    train_idx: np.ndarray     # flat indices of observed training cells
    test_idx: np.ndarray      # flat indices of held-out cells


@dataclass
class InteractionData:
    X: object                 # dense ndarray, or CSR when observed density < 5%
    M: object
    names: list
    stats: dict = field(default_factory=dict)


# --- four-motif image set ------------------------------------------------

_GRID = 20


def _motif_disk():
    img = np.zeros((_GRID, _GRID))
    for r in range(_GRID):
        for c in range(_GRID):
            if (r - 7) ** 2 + (c - 7) ** 2 <= 25:
                img[r, c] = 1.0
    return img


def _motif_cross():
    img = np.zeros((_GRID, _GRID))
    img[9:11, 3:17] = 1.0
    img[3:17, 9:11] = 1.0
    return img


def _motif_frame():
    img = np.zeros((_GRID, _GRID))
    img[5:18, 5:18] = 1.0
    img[7:16, 7:16] = 0.0
    return img


def _motif_stripe():
    img = np.zeros((_GRID, _GRID))
    for r in range(_GRID):
        for c in range(_GRID):
            if abs(r - c) <= 1:
                img[r, c] = 1.0
    return img


def gen_dog():
    """400x16 Boolean matrix of Boolean rank exactly 4.

    Four overlapping 20x20 motifs (disk, cross, hollow frame, diagonal
    stripe) flattened to 400-pixel columns; data column j is the OR of the
    motifs in j's bit pattern, so the 16 columns run through every subset
    including the empty (all-zero) one. Each motif keeps private pixels, so
    the singleton columns embed a 4x4 identity and the rank cannot drop
    below 4.
    """
    motifs = [_motif_disk(), _motif_cross(), _motif_frame(), _motif_stripe()]
    W = np.stack([m.ravel() for m in motifs], axis=1)
    H = np.zeros((4, 16))
    for j in range(16):
        for i in range(4):
            if (j >> i) & 1:
                H[i, j] = 1.0
    return GroundTruth(X=boolean_matmul(W, H), W=W, H=H, rank=4)


# --- torso-plus-limbs image set -----------------------------------------

_SWIM_GRID = 32


def _limb_pixels(anchor, sr, sc, position):
    """Length-8 limb in one of four positions: three straight rays into the
    limb's quadrant plus an elbow (4 out, 4 up/down)."""
    r0, c0 = anchor
    if position == 0:                      # horizontal
        return [(r0, c0 + sc * t) for t in range(1, 9)]
    if position == 1:                      # diagonal
        return [(r0 + sr * t, c0 + sc * t) for t in range(1, 9)]
    if position == 2:                      # vertical
        return [(r0 + sr * t, c0) for t in range(1, 9)]
    out = [(r0, c0 + sc * t) for t in range(1, 5)]
    corner = (r0, c0 + sc * 4)
    out += [(corner[0] + sr * t, corner[1]) for t in range(1, 5)]
    return out


def gen_swimmer():
    """1024x256 Boolean matrix: a fixed torso plus four limbs, each in one
    of four positions. Feature 4*limb+position is torso plus that limb
    placement; column j (base-4 digits of j) is the OR of one placement per
    limb, giving 256 distinct columns."""
    torso = np.zeros((_SWIM_GRID, _SWIM_GRID))
    torso[12:20, 14:18] = 1.0
    anchors = [((11, 13), -1, -1),   # top-left
               ((11, 18), -1, +1),   # top-right
               ((20, 13), +1, -1),   # bottom-left
               ((20, 18), +1, +1)]   # bottom-right
    features = []
    for (anchor, sr, sc) in anchors:
        for pos in range(4):
            img = torso.copy()
            for (r, c) in _limb_pixels(anchor, sr, sc, pos):
                img[r, c] = 1.0
            features.append(img.ravel())
    W = np.stack(features, axis=1)
    H = np.zeros((16, 256))
    for j in range(256):
        for limb in range(4):
            pos = (j // (4 ** limb)) % 4
            H[4 * limb + pos, j] = 1.0
    return GroundTruth(X=boolean_matmul(W, H), W=W, H=H, rank=16)


# --- random sets ----------------------------------------------------------

def gen_gaussian(n=50, m=100, k=3, seed=0, noise=0.0):
    """X = W H with nonnegative factors |N(0,1)|, optional additive
    Gaussian noise of the given standard deviation."""
    if not (n >= 1 and m >= 1 and 1 <= k <= min(n, m)):
        raise ValueError("need 1 <= k <= min(n, m)")
    gen = RandomSource(seed).generator()
    W = np.abs(gen.normal(size=(n, k)))
    H = np.abs(gen.normal(size=(k, m)))
    X = W @ H
    if noise > 0:
        X = np.maximum(X + noise * gen.normal(size=X.shape), 0.0)
    return GroundTruth(X=X, W=W, H=H, rank=k)


def gen_planted_boolean(n=500, m=500, k=4, w_density=0.35, h_density=0.35,
                        flip=0.0, spurious=None, seed=0):
    """Boolean OR-product of Bernoulli factors with optional noise layers.

    Densities may be scalars or per-row / per-column vectors
    (heterogeneous propensities). `flip` flips that fraction of entries
    symmetrically. `spurious=(u, v)` ORs in extra ones with per-cell
    probability u_i * v_j, modeling hub-like false links that row/column
    propensities explain but a low-rank block structure does not. W and H
    are the clean planted factors; X includes the noise."""
    if not 0.0 <= flip < 0.5:
        raise ValueError("flip fraction must lie in [0, 0.5)")
    gen = RandomSource(seed).generator()
    w_density = np.broadcast_to(np.asarray(w_density, dtype=np.float64)
                                .reshape(-1, 1), (n, k))
    h_density = np.broadcast_to(np.asarray(h_density, dtype=np.float64)
                                .reshape(1, -1), (k, m))
    W = (gen.random((n, k)) < w_density).astype(np.float64)
    H = (gen.random((k, m)) < h_density).astype(np.float64)
    X = boolean_matmul(W, H)
    if spurious is not None:
        u, v = (np.asarray(s, dtype=np.float64).ravel() for s in spurious)
        if u.size != n or v.size != m:
            raise ValueError("spurious propensities must have lengths n, m")
        prob = np.clip(np.outer(u, v), 0.0, 1.0)
        X = np.maximum(X, (gen.random(X.shape) < prob).astype(np.float64))
    if flip > 0:
        count = int(round(flip * X.size))
        idx = gen.choice(X.size, size=count, replace=False)
        flat = X.ravel()
        flat[idx] = 1.0 - flat[idx]
        X = flat.reshape(X.shape)
    return GroundTruth(X=X, W=W, H=H, rank=k)


# --- interaction edge-list loader ----------------------------------------

_SPARSE_DENSITY = 0.05
_MIN_DEGREE = 5


def load_ppi_edgelist(path, min_degree=_MIN_DEGREE):
    """Load a labeled interaction edge list into a symmetric matrix.

    Each line is "name_a name_b label" with label 1 (interacting) or 0
    (non-interacting); blank lines and lines starting with # are skipped.
    Consistent duplicate pairs collapse to one observation; pairs reported
    with both labels are conflicts and are dropped entirely. Proteins with
    fewer than min_degree observed partners are pruned iteratively to a
    fixed point. The matrix and mask come back dense, or as CSR matrices
    when the observed density is below 5%.
    """
    pairs = {}
    conflicts = set()
    duplicates = 0
    order = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError("%s:%d: expected 'name name label', got %r"
                                 % (path, lineno, line))
            a, b, lab = parts
            if lab not in ("0", "1"):
                raise ValueError("%s:%d: label must be 0 or 1, got %r"
                                 % (path, lineno, lab))
            for name in (a, b):
                if name not in order:
                    order[name] = len(order)
            key = (a, b) if order[a] <= order[b] else (b, a)
            label = float(lab)
            if key in pairs:
                if pairs[key] != label:
                    conflicts.add(key)
                else:
                    duplicates += 1
            else:
                pairs[key] = label
    for key in conflicts:
        del pairs[key]

    # iterative low-degree pruning to a fixed point
    degree = {}
    for (a, b) in pairs:
        degree[a] = degree.get(a, 0) + 1
        degree[b] = degree.get(b, 0) + 1
        if a == b:
            degree[a] -= 1
    alive = set(order)
    pruned = 0
    while True:
        drop = {p for p in alive if degree.get(p, 0) < min_degree}
        if not drop:
            break
        pruned += len(drop)
        alive -= drop
        for (a, b), _lab in list(pairs.items()):
            if a in drop or b in drop:
                del pairs[(a, b)]
                for p in set((a, b)) - drop:
                    degree[p] -= 1
        for p in drop:
            degree.pop(p, None)

    names = sorted(alive, key=order.get)
    index = {name: i for i, name in enumerate(names)}
    n = len(names)
    rows, cols, vals = [], [], []
    num_pos = num_neg = 0
    for (a, b), lab in pairs.items():
        i, j = index[a], index[b]
        rows.append(i)
        cols.append(j)
        vals.append(lab)
        if i != j:
            rows.append(j)
            cols.append(i)
            vals.append(lab)
        if lab == 1.0:
            num_pos += 1
        else:
            num_neg += 1
    observed = len(rows)
    density = observed / (n * n) if n else 0.0
    stats = {"num_proteins_raw": len(order), "num_proteins": n,
             "num_pos_pairs": num_pos, "num_neg_pairs": num_neg,
             "num_conflicts": len(conflicts), "num_duplicates": duplicates,
             "num_pruned": pruned, "observed_density": density}
    X = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((np.ones(observed), (rows, cols)), shape=(n, n))
    if density >= _SPARSE_DENSITY:
        return InteractionData(X=X.toarray(), M=M.toarray(), names=names,
                               stats=stats)
    return InteractionData(X=X, M=M, names=names, stats=stats)


# --- stratified splitting --------------------------------------------------

def _allocate(counts, total):
    """Largest-remainder apportionment of `total` across strata, capped at
    each stratum's size, ties broken by stratum order."""
    sizes = np.asarray(counts, dtype=np.int64)
    if total > sizes.sum():
        raise ValueError("test size exceeds observed cells")
    quotas = total * sizes / sizes.sum()
    base = np.minimum(np.floor(quotas).astype(np.int64), sizes)
    left = total - base.sum()
    remainders = quotas - np.floor(quotas)
    order = sorted(range(len(sizes)), key=lambda i: (-remainders[i], i))
    while left > 0:
        for s in order:
            if left > 0 and base[s] < sizes[s]:
                base[s] += 1
                left -= 1
    return base


def split_stratified(X, test_size, rng, M=None):
    """Hold out a fraction of the observed cells, stratified by class.

    Boolean matrices are stratified into positive and negative observed
    cells sampled proportionally (largest-remainder rounding); real-valued
    matrices form a single stratum. Held-out cells are cleared from the
    training mask and zeroed in X_train. A stratum may not be consumed
    entirely: at least one training cell per nonempty stratum must survive.
    """
    X = as_matrix(X, "X")
    if not 0.0 < test_size < 1.0:
        raise ValueError("test_size must lie in (0, 1)")
    if M is None:
        M = np.ones_like(X)
    M = as_mask(M, X.shape, "M")
    observed = np.flatnonzero(M.ravel() > 0)
    if observed.size == 0:
        raise ValueError("no observed cells to split")
    xflat = X.ravel()
    if is_boolean(X):
        strata = [observed[xflat[observed] == 1.0],
                  observed[xflat[observed] == 0.0]]
        strata = [s for s in strata if s.size]
    else:
        strata = [observed]
    total = int(round(test_size * observed.size))
    if total == 0:
        raise ValueError("test_size selects no cells")
    counts = _allocate([s.size for s in strata], total)
    for s, t in zip(strata, counts):
        if t == s.size:
            raise ValueError("a stratum would lose all training cells")
    gen = rng.generator() if isinstance(rng, RandomSource) \
        else RandomSource(int(rng)).generator()
    picks = [gen.choice(s, size=int(t), replace=False)
             for s, t in zip(strata, counts)]
    test_idx = np.sort(np.concatenate(picks)).astype(np.int64)
    m_train = M.copy()
    m_train.ravel()[test_idx] = 0.0
    train_idx = np.flatnonzero(m_train.ravel() > 0)
    return SplitResult(M_train=m_train, X_train=X * m_train,
                       train_idx=train_idx, test_idx=test_idx)
