"""Encrypted inner-product matching (secure kNN adapted to inner products).

A target user encrypts a weighted interest query into a trapdoor, candidates
encrypt their interest vectors into indices, and a super node that holds
neither the key nor the plaintexts computes ``trapdoor . index``, which
equals ``r * (Q . D + eps) + t``.

Both invertible matrices are kept only as LU factors: ``M^-1 v`` is a pair
of triangular solves and ``M^T v`` a pair of triangular products, so the key
never holds more than one dense (n+2)^2 array per matrix. That is what makes
dictionary sizes of 12000 keywords fit in a few GB.
"""

from __future__ import annotations

import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve
from scipy.linalg.blas import dtrmm

from .taxonomy import InterestModel, KeywordDictionary, to_plain_vector

R_RANGE = (0.5, 2.0)
T_RANGE = (-1.0, 1.0)
DET_FLOOR = 1e-12
WIRE_HEADER = struct.Struct("<I")
KEY_MAGIC = b"PCBESK"
KEY_VERSION = 1


class DimensionError(ValueError):
    pass


def cond_limit(dim: int) -> float:
    # 1-norm condition of uniform random matrices grows roughly like dim**2;
    # a flat 1e4 is only reachable for small dims.
    return max(1e4, float(dim) ** 2)


@dataclass(frozen=True, eq=False)
class FactoredMatrix:
    """An invertible matrix held as its packed LU factorization (``P L U``)."""

    lu: np.ndarray
    piv: np.ndarray
    perm: np.ndarray

    @classmethod
    def factor(cls, m: np.ndarray, overwrite: bool = False) -> FactoredMatrix:
        lu, piv = lu_factor(m, overwrite_a=overwrite, check_finite=False)
        perm = list(range(lu.shape[0]))
        for i, p in enumerate(piv.tolist()):
            perm[i], perm[p] = perm[p], perm[i]
        return cls(lu, piv, np.array(perm))

    @property
    def dim(self) -> int:
        return self.lu.shape[0]

    def solve(self, v: np.ndarray) -> np.ndarray:
        """``M^-1 v`` for a vector or a (dim, N) block."""
        return lu_solve((self.lu, self.piv), v, check_finite=False)

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        """``M^T v`` for a vector or a (dim, N) block."""
        x = np.asfortranarray(v[self.perm].reshape(self.dim, -1), dtype=np.float64)
        x = dtrmm(1.0, self.lu, x, lower=1, trans_a=1, diag=1, overwrite_b=1)
        x = dtrmm(1.0, self.lu, x, lower=0, trans_a=1, diag=0, overwrite_b=1)
        return x.reshape(v.shape)

    def dense(self) -> np.ndarray:
        lower = np.tril(self.lu, -1) + np.eye(self.dim)
        return (lower @ np.triu(self.lu))[np.argsort(self.perm)]

    def log_abs_det(self) -> float:
        return float(np.sum(np.log(np.abs(np.diag(self.lu)))))


def _one_norm(a: np.ndarray, block: int = 512) -> float:
    # Column sums in blocks to avoid a full-size temporary at large dims.
    if a.shape[1] <= block:
        return float(np.abs(a).sum(axis=0).max())
    return max(float(np.abs(a[:, j:j + block]).sum(axis=0).max()) for j in range(0, a.shape[1], block))


def random_invertible(dim: int, rng: np.random.Generator, max_tries: int = 100) -> FactoredMatrix:
    """Uniform [-1, 1] matrix, redrawn until non-degenerate and well-conditioned."""
    limit = cond_limit(dim)
    for _ in range(max_tries):
        # Transposed C array is Fortran-ordered, so LAPACK factors it in place.
        a = rng.uniform(-1.0, 1.0, size=(dim, dim)).T
        anorm = _one_norm(a)
        fm = FactoredMatrix.factor(a, overwrite=True)
        if np.any(np.diag(fm.lu) == 0) or fm.log_abs_det() <= np.log(DET_FLOOR):
            continue
        rcond, info = lapack.dgecon(fm.lu, anorm, norm="1")
        if info == 0 and rcond > 0 and 1.0 / rcond < limit:
            return fm
    raise RuntimeError(f"no well-conditioned {dim}x{dim} matrix after {max_tries} draws")


@dataclass(frozen=True, eq=False)
class SecretKey:
    """The split-indicator bit vector ``s`` and two invertible matrices."""

    s: np.ndarray
    f1: FactoredMatrix
    f2: FactoredMatrix

    def __post_init__(self):
        if not (self.s.shape == (self.f1.dim,) and self.f1.dim == self.f2.dim):
            raise DimensionError("S and both matrices must share dimension n+2")

    @property
    def dim(self) -> int:
        return self.s.shape[0]

    @property
    def n(self) -> int:
        return self.dim - 2

    @property
    def m1(self) -> np.ndarray:
        return self.f1.dense()

    @property
    def m2(self) -> np.ndarray:
        return self.f2.dense()

    @classmethod
    def from_matrices(cls, s: Sequence[int], m1: np.ndarray, m2: np.ndarray) -> SecretKey:
        s = np.asarray(s, dtype=np.uint8)
        if np.any(s > 1):
            raise ValueError("S must be a bit vector")
        f1 = FactoredMatrix.factor(np.array(m1, dtype=np.float64, order="F"))
        f2 = FactoredMatrix.factor(np.array(m2, dtype=np.float64, order="F"))
        return cls(s, f1, f2)

    def to_bytes(self) -> bytes:
        head = KEY_MAGIC + struct.pack("<BI", KEY_VERSION, self.dim)
        bits = np.packbits(self.s).tobytes()
        return head + bits + self.m1.astype("<f8").tobytes() + self.m2.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> SecretKey:
        if not blob.startswith(KEY_MAGIC):
            raise ValueError("not a secret key blob")
        version, dim = struct.unpack_from("<BI", blob, len(KEY_MAGIC))
        if version != KEY_VERSION:
            raise ValueError(f"unsupported key version {version}")
        off = len(KEY_MAGIC) + 5
        nbits = (dim + 7) // 8
        s = np.unpackbits(np.frombuffer(blob, np.uint8, nbits, off))[:dim]
        off += nbits
        size = dim * dim * 8
        if len(blob) != off + 2 * size:
            raise ValueError("truncated secret key blob")
        m1 = np.frombuffer(blob, "<f8", dim * dim, off).reshape(dim, dim)
        m2 = np.frombuffer(blob, "<f8", dim * dim, off + size).reshape(dim, dim)
        return cls.from_matrices(s, m1, m2)


def gen_key(n: int, seed: int | None = None, rng: np.random.Generator | None = None) -> SecretKey:
    if n < 1:
        raise ValueError("dictionary size n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    dim = n + 2
    s = rng.integers(0, 2, size=dim, dtype=np.uint8)
    return SecretKey(s, random_invertible(dim, rng), random_invertible(dim, rng))


def identity_key(n: int, s: Sequence[int] | None = None) -> SecretKey:
    """Key with M1 = M2 = I; every encryption stage collapses to the plaintext."""
    dim = n + 2
    s = np.ones(dim, dtype=np.uint8) if s is None else s
    return SecretKey.from_matrices(s, np.eye(dim), np.eye(dim))


@dataclass(frozen=True)
class ObfuscationParams:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def draw(self, rng: np.random.Generator, size: int | None = None):
        if self.sigma == 0:
            return self.mu if size is None else np.full(size, float(self.mu))
        return rng.normal(self.mu, self.sigma, size=size)


@dataclass(frozen=True, eq=False)
class QueryVector:
    plain: np.ndarray
    r: float
    t: float

    @property
    def extended(self) -> np.ndarray:
        return np.concatenate([self.r * self.plain, [self.r, self.t]])


def build_query(plain: Sequence[float], r: float, t: float) -> QueryVector:
    if r == 0:
        raise ValueError("query scale r must be nonzero")
    return QueryVector(np.asarray(plain, dtype=np.float64), float(r), float(t))


def extend_candidate(plain: np.ndarray, epsilon) -> np.ndarray:
    """``(D, eps, 1)``; works row-wise on an (N, n) block with a length-N ``epsilon``."""
    plain = np.asarray(plain, dtype=np.float64)
    if plain.ndim == 1:
        return np.concatenate([plain, [float(epsilon), 1.0]])
    eps = np.broadcast_to(np.asarray(epsilon, dtype=np.float64), (plain.shape[0],))
    return np.column_stack([plain, eps, np.ones(plain.shape[0])])


def split_vector(v: np.ndarray, s: np.ndarray, split_on: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split ``v`` into two shares where ``s == split_on``; copy it elsewhere.

    Split positions get a random share drawn uniformly from
    ``[-|v|-1, |v|+1]`` and its complement ``v - share``. ``v`` may be a
    vector or an (N, dim) block split row-wise.
    """
    v = np.asarray(v, dtype=np.float64)
    s = np.asarray(s)
    if v.shape[-1] != s.shape[0]:
        raise DimensionError(f"vector length {v.shape[-1]} does not match S length {s.shape[0]}")
    mask = np.broadcast_to(s == split_on, v.shape)
    bound = np.abs(v) + 1.0
    share = rng.uniform(-bound, bound)
    first = np.where(mask, share, v)
    second = np.where(mask, v - share, v)
    return first, second


def split_query(qt: np.ndarray, s: np.ndarray, rng: np.random.Generator):
    return split_vector(qt, s, 0, rng)


def split_index(dbar: np.ndarray, s: np.ndarray, rng: np.random.Generator):
    return split_vector(dbar, s, 1, rng)


@dataclass(frozen=True, eq=False)
class _VectorPair:
    a: np.ndarray
    b: np.ndarray

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def payload_size(self) -> int:
        return 2 * self.dim * 4

    def to_bytes(self) -> bytes:
        return (WIRE_HEADER.pack(self.dim) + self.a.astype("<f4").tobytes()
                + self.b.astype("<f4").tobytes())

    @classmethod
    def from_bytes(cls, blob: bytes):
        if len(blob) < WIRE_HEADER.size:
            raise DimensionError("payload shorter than its dimension header")
        (dim,) = WIRE_HEADER.unpack_from(blob)
        expected = WIRE_HEADER.size + 2 * dim * 4
        if dim < 3 or len(blob) != expected:
            raise DimensionError(f"payload is {len(blob)} bytes, header dim {dim} needs {expected}")
        vec = np.frombuffer(blob, "<f4", 2 * dim, WIRE_HEADER.size).astype(np.float64)
        return cls(vec[:dim].copy(), vec[dim:].copy())

    def __eq__(self, other):
        return (type(other) is type(self) and np.array_equal(self.a, other.a)
                and np.array_equal(self.b, other.b))

    __hash__ = None


class Trapdoor(_VectorPair):
    pass


class EncIndex(_VectorPair):
    pass


def _as_plain(data, dictionary: KeywordDictionary | None, n: int) -> np.ndarray:
    if isinstance(data, InterestModel):
        if dictionary is None:
            raise ValueError("an InterestModel needs the keyword dictionary to be vectorized")
        data = to_plain_vector(data, dictionary)
    plain = np.asarray(data, dtype=np.float64)
    if plain.shape[-1] != n:
        raise DimensionError(f"plain vector has {plain.shape[-1]} entries, key expects n={n}")
    return plain


def build_trapdoor(query, key: SecretKey, *, dictionary: KeywordDictionary | None = None,
                   r: float | None = None, t: float | None = None,
                   rng: np.random.Generator | None = None) -> Trapdoor:
    """Encrypt a target user's interest (model or plain weight vector) into a trapdoor.

    ``r`` and ``t`` are drawn fresh from ``rng`` when not given; ``r`` is
    kept positive so that higher scores still mean higher similarity.
    """
    rng = rng if rng is not None else np.random.default_rng()
    plain = _as_plain(query, dictionary, key.n)
    r = rng.uniform(*R_RANGE) if r is None else r
    t = rng.uniform(*T_RANGE) if t is None else t
    q1, q2 = split_query(build_query(plain, r, t).extended, key.s, rng)
    return Trapdoor(key.f1.solve(q1), key.f2.solve(q2))


def build_index(candidate, key: SecretKey, *, dictionary: KeywordDictionary | None = None,
                obf: ObfuscationParams = ObfuscationParams(), epsilon: float | None = None,
                rng: np.random.Generator | None = None) -> EncIndex:
    rng = rng if rng is not None else np.random.default_rng()
    plain = _as_plain(candidate, dictionary, key.n)
    eps = obf.draw(rng) if epsilon is None else epsilon
    d1, d2 = split_index(extend_candidate(plain, eps), key.s, rng)
    return EncIndex(key.f1.rmatvec(d1), key.f2.rmatvec(d2))


@dataclass(frozen=True, eq=False)
class IndexBatch:
    """Indices of many candidates stacked row-wise for vectorized scoring."""

    ids: tuple
    a: np.ndarray
    b: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> EncIndex:
        return EncIndex(self.a[i].copy(), self.b[i].copy())

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[object, EncIndex]]) -> IndexBatch:
        pairs = list(pairs)
        if not pairs:
            raise ValueError("candidate list is empty")
        ids = tuple(cid for cid, _ in pairs)
        return cls(ids, np.vstack([ix.a for _, ix in pairs]), np.vstack([ix.b for _, ix in pairs]))


def build_indices(plain: np.ndarray, key: SecretKey, ids: Sequence | None = None, *,
                  obf: ObfuscationParams = ObfuscationParams(), epsilon=None,
                  rng: np.random.Generator | None = None) -> IndexBatch:
    """Batched :func:`build_index` over the rows of an (N, n) weight matrix."""
    rng = rng if rng is not None else np.random.default_rng()
    plain = np.atleast_2d(_as_plain(plain, None, key.n))
    count = plain.shape[0]
    eps = obf.draw(rng, size=count) if epsilon is None else epsilon
    d1, d2 = split_index(extend_candidate(plain, eps), key.s, rng)
    ids = tuple(range(count)) if ids is None else tuple(ids)
    return IndexBatch(ids, key.f1.rmatvec(d1.T).T, key.f2.rmatvec(d2.T).T)


def score(trapdoor: Trapdoor, index: EncIndex) -> float:
    if trapdoor.dim != index.dim:
        raise DimensionError(f"trapdoor dim {trapdoor.dim} != index dim {index.dim}")
    return float(trapdoor.a @ index.a + trapdoor.b @ index.b)


def score_batch(trapdoor: Trapdoor, batch: IndexBatch) -> np.ndarray:
    if trapdoor.dim != batch.a.shape[1]:
        raise DimensionError(f"trapdoor dim {trapdoor.dim} != index dim {batch.a.shape[1]}")
    return batch.a @ trapdoor.a + batch.b @ trapdoor.b


def rank(ids: Sequence, scores: Sequence[float], k: int, tie_tol: float = 1e-9) -> list:
    """Ids of the ``k`` highest scores, descending; ties go to the smaller id.

    Scores within ``tie_tol`` (relative to the largest magnitude) of their
    neighbour count as tied, so float noise from the encrypted path does not
    reorder candidates whose plaintext similarities are equal.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("candidate list is empty")
    tol = tie_tol * max(1.0, float(np.max(np.abs(scores))))
    if scores.size > k:
        kth = -np.partition(-scores, k - 1)[k - 1]
        pool = np.flatnonzero(scores >= kth - 2 * tol)
    else:
        pool = np.arange(scores.size)
    pool = pool[np.argsort(-scores[pool], kind="stable")]
    ordered = []
    i = 0
    while i < pool.size and len(ordered) < k:
        j = i + 1
        while j < pool.size and scores[pool[j - 1]] - scores[pool[j]] <= tol:
            j += 1
        ordered.extend(sorted(pool[i:j], key=lambda p: ids[p]))
        i = j
    return [ids[p] for p in ordered[:k]]


def top_k(trapdoor: Trapdoor, indices: IndexBatch | Iterable[tuple[object, EncIndex]],
          k: int) -> list:
    """Rank candidates by encrypted score. Fewer than ``k`` candidates returns them all."""
    if k < 1:
        raise ValueError("k must be >= 1")
    batch = indices if isinstance(indices, IndexBatch) else IndexBatch.from_pairs(indices)
    return rank(batch.ids, score_batch(trapdoor, batch), k)


def precision_at_k(found: Sequence, truth: Sequence, k: int) -> float:
    return len(set(found[:k]) & set(truth[:k])) / k
