"""Dense linear-algebra helpers: Hermitian exponentials, closed-form
semigroup integrals, operator norms, kernel-restricted solves.

Everything here works on plain complex ndarrays.  All exponentials are of
Hermitian matrices and go through eigendecompositions (the eigenbases are
reused for the closed-form corrector integrals), never scaling-and-squaring.
"""

import numpy as np

from .errors import IllConditioned

# dimension above which operator norms switch to randomized power iteration
_SVD_CUTOFF = 512
_POWER_ITERS = 20
_POWER_PROBES = 3

# relative eigenvalue gap below which the confluent limit s*exp(-l*s) is used
CONFLUENT_RTOL = 1e-10


def herm(a):
    """Symmetrized copy (A + A*)/2."""
    return 0.5 * (a + a.conj().T)


def hermiticity_defect(a):
    """Relative Hermiticity defect ||A - A*|| / max(||A||, 1e-300)."""
    n = np.linalg.norm(a)
    if n == 0.0:
        return 0.0
    return np.linalg.norm(a - a.conj().T) / n


def opnorm(a, rng=None):
    """Spectral norm; full SVD for small matrices, power iteration above."""
    a = np.asarray(a)
    if max(a.shape) <= _SVD_CUTOFF:
        return float(np.linalg.norm(a, 2))
    rng = np.random.default_rng(0) if rng is None else rng
    best = 0.0
    for _ in range(_POWER_PROBES):
        x = rng.standard_normal(a.shape[1]) + 1j * rng.standard_normal(a.shape[1])
        x /= np.linalg.norm(x)
        for _ in range(_POWER_ITERS):
            y = a @ x
            x = a.conj().T @ y
            nx = np.linalg.norm(x)
            if nx == 0.0:
                break
            x /= nx
        best = max(best, float(np.linalg.norm(a @ x)))
    return best


def eigh_herm(a):
    """Eigendecomposition of a (numerically) Hermitian matrix."""
    return np.linalg.eigh(herm(a))


def herm_expm(a, s=1.0, eig=None):
    """exp(-A s) for Hermitian A via eigendecomposition.

    Pass ``eig=(w, v)`` to reuse a decomposition across several times s.
    """
    w, v = eigh_herm(a) if eig is None else eig
    return (v * np.exp(-w * s)) @ v.conj().T


def confluent_weights(lam, s):
    """Matrix of weights w[i,j] = (e^{-lam_j s} - e^{-lam_i s})/(lam_i - lam_j).

    This is the entrywise kernel of int_0^s e^{-L(s-t)} (.) e^{-L t} dt in the
    eigenbasis of L.  Degenerate pairs use the limit s*e^{-lam s}.
    """
    lam = np.asarray(lam, dtype=float)
    e = np.exp(-lam * s)
    li = lam[:, None]
    lj = lam[None, :]
    diff = li - lj
    scale = np.maximum(np.abs(li), np.abs(lj))
    degen = np.abs(diff) <= CONFLUENT_RTOL * np.maximum(scale, 1.0)
    safe = np.where(degen, 1.0, diff)
    w = (e[None, :] - e[:, None]) / safe
    w_conf = s * np.exp(-0.5 * (li + lj) * s)
    return np.where(degen, w_conf, w)


def confluent_weights_batch(lam, s):
    """Batched confluent weights: lam has shape (..., n), output (..., n, n)."""
    lam = np.asarray(lam, dtype=float)
    e = np.exp(-lam * s)
    li = lam[..., :, None]
    lj = lam[..., None, :]
    diff = li - lj
    scale = np.maximum(np.abs(li), np.abs(lj))
    degen = np.abs(diff) <= CONFLUENT_RTOL * np.maximum(scale, 1.0)
    safe = np.where(degen, 1.0, diff)
    w = (e[..., None, :] - e[..., :, None]) / safe
    w_conf = s * np.exp(-0.5 * (li + lj) * s)
    return np.where(degen, w_conf, w)


def semigroup_integral(L, N, s, eig=None):
    """Closed form of int_0^s e^{-L(s-t)} N e^{-L t} dt, L Hermitian.

    The integral is evaluated exactly in the eigenbasis of L with the
    confluent limit on (numerically) degenerate eigenvalue pairs.
    """
    w, v = eigh_herm(L) if eig is None else eig
    ntil = v.conj().T @ N @ v
    return v @ (confluent_weights(w, s) * ntil) @ v.conj().T


def orthonormal_columns(p, n, tol_factor=100.0):
    """Orthonormal basis (as columns) of the range of a projector ``p``.

    ``n`` is the expected rank; eigenvectors with eigenvalue near 1 are
    returned.
    """
    w, v = eigh_herm(p)
    idx = np.argsort(w)[::-1][:n]
    if n and (w[idx].min() < 1.0 - 1e-6):
        raise IllConditioned("projector eigenvalues not close to 1")
    basis = v[:, idx]
    q, _ = np.linalg.qr(basis)
    return q


def restricted_solve(gram, rhs, kernel_dim, cond_cap=1e12):
    """Solve gram @ x = rhs on the orthogonal complement of the kernel.

    ``gram`` is Hermitian PSD with an (exactly known) ``kernel_dim``-dimensional
    kernel; the solution is the one orthogonal to the kernel.  Raises
    IllConditioned when the restricted condition number exceeds ``cond_cap``.
    """
    w, v = eigh_herm(gram)
    if kernel_dim:
        w_pos = w[kernel_dim:]
    else:
        w_pos = w
    if w_pos.size == 0:
        raise IllConditioned("empty positive spectrum")
    if w_pos[0] <= 0 or w_pos[-1] / w_pos[0] > cond_cap:
        raise IllConditioned(
            f"restricted Gram condition {w_pos[-1] / max(w_pos[0], 1e-300):.2e} "
            f"exceeds cap {cond_cap:.1e}"
        )
    inv = np.concatenate([np.zeros(kernel_dim), 1.0 / w_pos])
    return v @ (inv[:, None] * (v.conj().T @ rhs))


def inv_sqrtm_herm(a):
    """A^{-1/2} for Hermitian positive definite A."""
    w, v = eigh_herm(a)
    if w.min() <= 0:
        raise IllConditioned("matrix not positive definite")
    return (v * (w ** -0.5)) @ v.conj().T


def sqrtm_herm(a):
    """A^{1/2} for Hermitian positive semi-definite A."""
    w, v = eigh_herm(a)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T
