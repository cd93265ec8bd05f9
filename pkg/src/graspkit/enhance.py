"""Local structural descriptors, a momentum memory bank, and cross-attention.

The bank holds K feature vectors maintained by momentum-updated clustering:
each batch feature is assigned to its most cosine-similar entry, and every
entry with assignees moves to alpha * entry + (1 - alpha) * mean(assignees).
Enhancement applies scaled dot-product cross-attention from input features
(queries) to the bank (keys/values) with a residual connection, computed per
head over contiguous splits of the model dimension.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import GripperModel, PointCloud, cylinder_group

logger = logging.getLogger(__name__)

DEFAULT_BANK_SIZE = 120
DEFAULT_MOMENTUM = 0.999
DEFAULT_FEATURE_DIM = 256
DEFAULT_ATTENTION_DIM = 256
DEFAULT_HEADS = 4

DESCRIPTOR_NORMAL_BINS = 16
DESCRIPTOR_RADIAL_BINS = 8


@dataclass
class LocalFeature:
    """Fixed-length descriptor attached to a grasp point and approach view."""

    vector: np.ndarray
    source_point: np.ndarray
    source_view: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        self.source_point = np.asarray(self.source_point, dtype=np.float64).reshape(3)
        self.source_view = np.asarray(self.source_view, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("feature vector must be finite")

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass
class MemoryBank:
    """K x C feature entries with a momentum coefficient."""

    entries: np.ndarray
    alpha: float = DEFAULT_MOMENTUM
    update_count: int = 0
    skipped_count: int = 0

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 1:
            raise ValueError("bank entries must be (K, C) with K >= 1")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("bank entries must be finite")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass
class AttentionWeights:
    """Query/key/value encodings, head count, and an optional output map.

    w_out maps the model dimension back to the feature dimension; when absent
    the two must agree and the output map is the identity.
    """

    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    heads: int = DEFAULT_HEADS
    w_out: np.ndarray | None = None

    def __post_init__(self):
        self.w_query = np.asarray(self.w_query, dtype=np.float64)
        self.w_key = np.asarray(self.w_key, dtype=np.float64)
        self.w_value = np.asarray(self.w_value, dtype=np.float64)
        shape = self.w_query.shape
        if len(shape) != 2:
            raise ValueError("weight matrices must be 2-D")
        if self.w_key.shape != shape or self.w_value.shape != shape:
            raise ValueError("query/key/value matrices must share a shape")
        if self.heads < 1 or shape[1] % self.heads:
            raise ValueError("model dimension must divide evenly into heads")
        for m in (self.w_query, self.w_key, self.w_value):
            if not np.all(np.isfinite(m)):
                raise ValueError("weights must be finite")
        if self.w_out is not None:
            self.w_out = np.asarray(self.w_out, dtype=np.float64)
            if self.w_out.shape[0] != shape[1]:
                raise ValueError("output map rows must match the model dimension")

    @property
    def feature_dim(self) -> int:
        return self.w_query.shape[0]

    @property
    def model_dim(self) -> int:
        return self.w_query.shape[1]


def extract_descriptor(
    cloud: PointCloud,
    p,
    v,
    gripper: GripperModel | None = None,
    radius: float = 0.03,
    height: float = 0.04,
    max_points: int | None = None,
    dim: int = DEFAULT_FEATURE_DIM,
) -> LocalFeature:
    """Deterministic descriptor of the cylinder neighborhood around (p, v).

    Concatenates the sorted covariance eigenvalue triple (sum-normalized),
    a 16-bin histogram of normal angles against v, and an 8-bin radial
    point-count histogram, all as fractions, then tiles to the requested
    dimension. Permutation-invariant in the neighborhood; raises when the
    cylinder holds no points. The gripper argument is accepted for signature
    parity and unused (the cylinder is the neighborhood definition).
    """
    del gripper
    if cloud.normals is None:
        raise ValueError("descriptor extraction needs normals")
    idx = cylinder_group(cloud, p, v, radius, height, max_points)
    if idx.size == 0:
        raise ValueError("empty cylinder neighborhood")
    pts = cloud.points[idx]
    nrm = cloud.normals[idx]
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)

    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    eig = np.linalg.eigvalsh(cov)[::-1]
    total = eig.sum()
    eig = eig / total if total > 1e-30 else np.zeros(3)

    cosang = np.clip(nrm @ v, -1.0, 1.0)
    ang = np.arccos(cosang)
    nhist, _ = np.histogram(ang, bins=DESCRIPTOR_NORMAL_BINS, range=(0.0, np.pi))
    nhist = nhist / idx.size

    rel = pts - p
    axial = rel @ v
    rad = np.sqrt(np.maximum(0.0, np.einsum("ij,ij->i", rel, rel) - axial**2))
    rhist, _ = np.histogram(rad, bins=DESCRIPTOR_RADIAL_BINS, range=(0.0, radius))
    rhist = rhist / idx.size

    base = np.concatenate([eig, nhist, rhist])
    return LocalFeature(np.resize(base, dim), p, v)


def init_bank(
    k: int = DEFAULT_BANK_SIZE,
    c: int = DEFAULT_FEATURE_DIM,
    alpha: float = DEFAULT_MOMENTUM,
    seed: int = 0,
) -> MemoryBank:
    """Gaussian-initialized bank with row-normalized entries."""
    rng = np.random.default_rng(seed)
    entries = rng.standard_normal((k, c))
    entries /= np.linalg.norm(entries, axis=1, keepdims=True)
    return MemoryBank(entries, alpha)


def _feature_matrix(batch) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        mat = np.asarray(batch, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError("feature array must be (B, C)")
        return mat
    if len(batch) == 0:
        return np.zeros((0, 0))
    return np.stack([f.vector for f in batch])


def assign_to_bank(bank: MemoryBank, features: np.ndarray):
    """Cosine argmax assignment of each feature row to a bank entry.

    Returns (assignment, keep_mask): assignment[i] is the entry index for
    kept rows; zero-norm rows are dropped from keep_mask. Ties take the
    lowest entry index.
    """
    norms = np.linalg.norm(features, axis=1)
    keep = norms > 0
    e_norm = np.linalg.norm(bank.entries, axis=1)
    sim = (features[keep] / norms[keep, None]) @ (
        bank.entries / np.maximum(e_norm, 1e-300)[:, None]
    ).T
    assignment = np.full(features.shape[0], -1, dtype=np.int64)
    assignment[keep] = np.argmax(sim, axis=1)
    return assignment, keep


def bank_update(bank: MemoryBank, batch) -> MemoryBank:
    """One momentum step: assign, average per entry, blend.

    Each entry j with assignees moves to alpha * k_j + (1 - alpha) * mean of
    its assigned raw features; entries without assignees stay put. Zero-norm
    features are skipped and counted. Returns a new bank.
    """
    feats = _feature_matrix(batch)
    if feats.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    if feats.shape[1] != bank.dim:
        raise ValueError(
            f"feature dim {feats.shape[1]} disagrees with bank dim {bank.dim}"
        )
    assignment, keep = assign_to_bank(bank, feats)
    skipped = int(np.count_nonzero(~keep))
    if skipped:
        logger.warning("bank_update skipped %d zero-norm features", skipped)

    kept_assign = assignment[keep]
    kept_feats = feats[keep]
    sums = np.zeros_like(bank.entries)
    np.add.at(sums, kept_assign, kept_feats)
    counts = np.bincount(kept_assign, minlength=bank.size).astype(np.float64)

    entries = bank.entries.copy()
    touched = counts > 0
    means = sums[touched] / counts[touched, None]
    entries[touched] = bank.alpha * entries[touched] + (1.0 - bank.alpha) * means
    return MemoryBank(
        entries,
        bank.alpha,
        bank.update_count + 1,
        bank.skipped_count + skipped,
    )


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_rows(features, bank: MemoryBank, weights: AttentionWeights) -> np.ndarray:
    """Per-head attention maps (heads, B, K) from features to bank entries."""
    f = _feature_matrix(features)
    q = f @ weights.w_query
    k = bank.entries @ weights.w_key
    dm = weights.model_dim
    dh = dm // weights.heads
    scale = np.sqrt(float(dm))
    maps = []
    for h in range(weights.heads):
        sl = slice(h * dh, (h + 1) * dh)
        maps.append(_softmax_rows(q[:, sl] @ k[:, sl].T / scale))
    return np.stack(maps)


def enhance(features, bank: MemoryBank, weights: AttentionWeights):
    """Cross-attention residual enhancement of a feature list.

    Queries come from the features, keys/values from the bank entries; rows
    are softmax-normalized per head over contiguous model-dimension splits,
    scaled by sqrt of the model dimension. The attended value is mapped back
    to the feature dimension (w_out, or identity when dimensions agree) and
    added to the input. Returns new LocalFeatures (or an array for array
    input), order-preserving.
    """
    f = _feature_matrix(features)
    if f.shape[0] == 0:
        return [] if not isinstance(features, np.ndarray) else f
    if f.shape[1] != weights.feature_dim:
        raise ValueError(
            f"feature dim {f.shape[1]} disagrees with weights {weights.feature_dim}"
        )
    if bank.dim != weights.feature_dim:
        raise ValueError("bank dim disagrees with attention weights")

    v = bank.entries @ weights.w_value
    dm = weights.model_dim
    dh = dm // weights.heads
    maps = attention_rows(f, bank, weights)
    attended = np.empty((f.shape[0], dm))
    for h in range(weights.heads):
        sl = slice(h * dh, (h + 1) * dh)
        attended[:, sl] = maps[h] @ v[:, sl]

    if weights.w_out is not None:
        if weights.w_out.shape[1] != f.shape[1]:
            raise ValueError("output map columns must match the feature dimension")
        delta = attended @ weights.w_out
    elif dm == f.shape[1]:
        delta = attended
    else:
        raise ValueError(
            "model dim differs from feature dim and no output map was given"
        )
    out = f + delta
    if isinstance(features, np.ndarray):
        return out
    return [
        LocalFeature(out[i], feat.source_point, feat.source_view)
        for i, feat in enumerate(features)
    ]


def random_attention_weights(
    c: int = DEFAULT_FEATURE_DIM,
    d_m: int = DEFAULT_ATTENTION_DIM,
    heads: int = DEFAULT_HEADS,
    seed: int = 0,
    with_output: bool = False,
) -> AttentionWeights:
    """Seeded Gaussian weights scaled by 1/sqrt(C), for tests and the CLI."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(float(c))
    wq = rng.standard_normal((c, d_m)) * scale
    wk = rng.standard_normal((c, d_m)) * scale
    wv = rng.standard_normal((c, d_m)) * scale
    w_out = None
    if with_output or d_m != c:
        w_out = rng.standard_normal((d_m, c)) * (1.0 / np.sqrt(float(d_m)))
    return AttentionWeights(wq, wk, wv, heads, w_out)
