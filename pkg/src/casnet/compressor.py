"""Per-frame low-rank feature compression via truncated SVD.

Each D x F' feature frame is factored as U S V^T; only the first `rank`
triplets travel to the fusion center as (U_a S_a, V_a^T). The SVD is a
one-sided Jacobi, batched across frames so whole sequences factor in a few
vectorized sweeps.
"""

from dataclasses import dataclass

import numpy as np

# Skip a Jacobi rotation once a column pair is orthogonal to this relative level.
_JACOBI_TOL = 1e-10
_MAX_SWEEPS = 60


@dataclass
class SvdFactors:
    """Wire-ready rank-a factors of one feature frame.

    left is U_a S_a (D x a), right is V_a^T (a x F'); column norms of left are
    the singular values, sorted non-increasing.
    """

    left: np.ndarray
    right: np.ndarray
    rank: int

    def __post_init__(self):
        self.left = np.ascontiguousarray(self.left, dtype=np.float32)
        self.right = np.ascontiguousarray(self.right, dtype=np.float32)
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise ValueError("factors must be 2-D")
        if self.left.shape[1] != self.rank or self.right.shape[0] != self.rank:
            raise ValueError(
                f"rank {self.rank} inconsistent with factor shapes "
                f"{self.left.shape} / {self.right.shape}"
            )
        d, fp = self.left.shape[0], self.right.shape[1]
        if not 1 <= self.rank <= min(d, fp):
            raise ValueError(f"rank must be in [1, {min(d, fp)}], got {self.rank}")
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise ValueError("factors contain non-finite entries")

    @property
    def shape(self):
        return self.left.shape[0], self.right.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SvdFactors):
            return NotImplemented
        return (
            self.rank == other.rank
            and self.left.shape == other.left.shape
            and self.right.shape == other.right.shape
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
        )


def _jacobi_svd_batch(x: np.ndarray):
    """Full SVD of a batch of matrices by one-sided Jacobi.

    x has shape (B, D, F'). Returns (u, s, vt) with u (B, D, r), s (B, r)
    descending, vt (B, r, F'), r = min(D, F'). Rotations orthogonalize the
    columns of the transposed (tall) matrix; the accumulated rotation product
    is exactly orthogonal, so the short-side factor needs no cleanup.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("expected a batch of matrices")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite entries")
    nb, d, fp = x.shape
    r = min(d, fp)
    tall = d <= fp
    # a: (B, n, r) whose r columns get orthogonalized; j accumulates rotations.
    a = np.ascontiguousarray(np.swapaxes(x, 1, 2)) if tall else x.copy()
    j = np.broadcast_to(np.eye(r), (nb, r, r)).copy()

    # Round-robin ordering: each round rotates r//2 disjoint column pairs in
    # one vectorized step (disjoint rotations commute, so this is exact).
    schedule = [
        (np.array([p for p, _ in rnd]), np.array([q for _, q in rnd]))
        for rnd in _round_robin_rounds(r)
    ]
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for ps, qs in schedule:
            ap = a[:, :, ps]
            aq = a[:, :, qs]
            app = np.einsum("bnk,bnk->bk", ap, ap)
            aqq = np.einsum("bnk,bnk->bk", aq, aq)
            apq = np.einsum("bnk,bnk->bk", ap, aq)
            need = np.abs(apq) > _JACOBI_TOL * np.sqrt(app * aqq)
            if not need.any():
                continue
            rotated = True
            apq_safe = np.where(need, apq, 1.0)
            zeta = (aqq - app) / (2.0 * apq_safe)
            # Smaller root of t^2 + 2*zeta*t - 1 = 0; zeta == 0 gives t = 1.
            t = 1.0 / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(zeta < 0.0, -t, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            cm = np.where(need, c, 1.0)[:, None, :]
            sm = np.where(need, s, 0.0)[:, None, :]
            a[:, :, ps] = cm * ap - sm * aq
            a[:, :, qs] = sm * ap + cm * aq
            jp = j[:, :, ps]
            jq = j[:, :, qs]
            j[:, :, ps] = cm * jp - sm * jq
            j[:, :, qs] = sm * jp + cm * jq
        if not rotated:
            break

    sv = np.sqrt(np.einsum("bnr,bnr->br", a, a))
    order = np.argsort(-sv, axis=1, kind="stable")
    sv = np.take_along_axis(sv, order, axis=1)
    a = np.take_along_axis(a, order[:, None, :], axis=2)
    j = np.take_along_axis(j, order[:, None, :], axis=2)

    # Normalize the tall-side columns; rank-deficient frames get an
    # orthonormal completion so both factors stay orthonormal.
    tiny = np.maximum(sv[:, :1], 1.0) * 1e-300
    q_fac = a / np.maximum(sv, tiny)[:, None, :]
    deficient = np.nonzero(sv[:, -1] <= sv[:, 0] * 1e-14)[0]
    for b in deficient:
        cutoff = sv[b, 0] * 1e-14
        for k in range(r):
            if sv[b, k] > cutoff:
                continue
            col = _complete_orthonormal(q_fac[b], k)
            q_fac[b, :, k] = col

    if tall:
        u = j
        vt = np.swapaxes(q_fac, 1, 2)
    else:
        u = q_fac
        vt = np.swapaxes(j, 1, 2)

    # Canonical signs: largest-|entry| of each left singular vector positive.
    pick = np.argmax(np.abs(u), axis=1)
    flip = np.sign(np.take_along_axis(u, pick[:, None, :], axis=1)[:, 0, :])
    flip = np.where(flip == 0.0, 1.0, flip)
    u = u * flip[:, None, :]
    vt = vt * flip[:, :, None]
    return u, sv, vt


def _round_robin_rounds(r: int):
    """Circle-method tournament schedule covering all column pairs."""
    cols = list(range(r)) + ([None] if r % 2 else [])
    n = len(cols)
    rounds = []
    for _ in range(n - 1):
        rnd = [
            (min(cols[i], cols[n - 1 - i]), max(cols[i], cols[n - 1 - i]))
            for i in range(n // 2)
            if cols[i] is not None and cols[n - 1 - i] is not None
        ]
        rounds.append(rnd)
        cols = [cols[0], cols[-1]] + cols[1:-1]
    return rounds


def _complete_orthonormal(q: np.ndarray, k: int) -> np.ndarray:
    """Unit vector orthogonal to columns of q other than k (Gram-Schmidt)."""
    n = q.shape[0]
    others = np.delete(q, k, axis=1)
    for cand in range(n):
        v = np.zeros(n)
        v[cand] = 1.0
        v -= others @ (others.T @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm
    raise RuntimeError("orthonormal completion failed")


def compress_sequence(h: np.ndarray, a: int) -> list[SvdFactors]:
    """Rank-a factors for every frame of a D x T x F' feature tensor."""
    h = np.asarray(h)
    if h.ndim != 3:
        raise ValueError("expected a D x T x F' tensor")
    d, n_frames, fp = h.shape
    if not 1 <= a <= min(d, fp):
        raise ValueError(f"rank must be in [1, {min(d, fp)}], got {a}")
    frames = np.ascontiguousarray(np.swapaxes(h, 0, 1))  # (T, D, F')
    u, sv, vt = _jacobi_svd_batch(frames)
    left = u[:, :, :a] * sv[:, None, :a]
    right = vt[:, :a, :]
    return [SvdFactors(left[t], right[t], a) for t in range(n_frames)]


def compress_frame(frame: np.ndarray, a: int) -> SvdFactors:
    """Best rank-a factors of one D x F' frame (Eckart-Young optimum)."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError("expected a D x F' matrix")
    return compress_sequence(frame[:, None, :], a)[0]


def decompress_frame(f: SvdFactors) -> np.ndarray:
    """Reconstruct the rank-a approximation left @ right."""
    if f.left.shape[1] != f.right.shape[0]:
        raise ValueError("factor inner dimensions disagree")
    return f.left @ f.right


def decompress_sequence(factors: list[SvdFactors]) -> np.ndarray:
    """Stack per-frame reconstructions back into a D x T x F' tensor."""
    if not factors:
        raise ValueError("empty factor list")
    frames = np.stack([decompress_frame(f) for f in factors])
    return np.ascontiguousarray(np.swapaxes(frames, 0, 1))
