"""Finite-dimensional threshold engine for quadratic operator pencils.

The object of study is the Hermitian pencil

    B(t, eps) = X(t)*X(t) + eps (Y2*Y(t) + Y(t)*Y2) + eps^2 (Q + lambda Q0),

X(t) = X0 + t X1, Y(t) = Y0 + t Y1, on finite-dimensional spaces.  The engine
computes the kernel projection of X0, the first-order solution operators Z and
Ztilde, the spectral germ, the third-order operator N(t, eps), the corrector
K(t, eps, s), and measures the remainder of the semigroup approximation

    exp(-B(t,eps) s) ~= exp(-L(t,eps) s) P + K(t, eps, s),

together with the order checks for the threshold approximations of the
spectral projector.  A bordered variant (pencil conjugated by an isomorphism
M) is provided for weighted problems.
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (DegenerateKernel, NonPositiveL, OutsideThresholdBall,
                     RankMismatch)

KERNEL_RTOL = 1e-10


# ---------------------------------------------------------------------------
# family and derived data


@dataclass
class AbstractFamily:
    """Matrices of one pencil instance; spaces are plain C^dim arrays.

    X0, X1: maps H -> H*; Y0, Y1, Y2: maps H -> Htilde; Q Hermitian, Q0
    Hermitian positive definite on H.  ``lam`` is the zero-order shift and
    ``form_constants`` carries the sampled constants (c0..c4, beta, kappa,
    c1, C1, cstar) used for envelopes and regime checks.
    """

    X0: np.ndarray
    X1: np.ndarray
    Y0: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    Q: np.ndarray
    Q0: np.ndarray
    lam: float
    form_constants: dict = field(default_factory=dict)

    @property
    def dim_H(self):
        return self.X0.shape[1]

    @property
    def dim_Hstar(self):
        return self.X0.shape[0]

    @property
    def dim_Htilde(self):
        return self.Y0.shape[0]

    def X(self, t):
        return self.X0 + t * self.X1

    def Y(self, t):
        return self.Y0 + t * self.Y1

    def A(self, t):
        xt = self.X(t)
        return xt.conj().T @ xt

    def B(self, t, eps):
        xt = self.X(t)
        yt = self.Y(t)
        cross = self.Y2.conj().T @ yt
        mat = (xt.conj().T @ xt
               + eps * (cross + cross.conj().T)
               + eps ** 2 * (self.Q + self.lam * self.Q0))
        return linalg.herm(mat)


@dataclass
class ThresholdData:
    """Kernel projection, Z/Ztilde solutions, germ blocks, and N blocks."""

    P: np.ndarray           # orthogonal projector onto Ker X0
    n: int
    d0: float               # smallest nonzero eigenvalue of X0*X0
    kernel_basis: np.ndarray   # dim_H x n orthonormal columns spanning Ker X0
    Z: np.ndarray
    Ztilde: np.ndarray
    R: np.ndarray           # P_* X1 P, a map H -> H*
    S_block: np.ndarray     # coefficient of theta1^2 in the germ (on H, P-supported)
    C_block: np.ndarray     # coefficient of theta1*theta2
    D_block: np.ndarray     # coefficient of theta2^2
    N11: np.ndarray
    N12: np.ndarray
    N21: np.ndarray
    N22: np.ndarray
    delta: float
    tau0: float
    cstar_check: float


def kernel_projection(X0, rel_tol=KERNEL_RTOL):
    """Orthogonal projector onto Ker X0 via SVD.

    Returns (P, n, d0) with n = dim of the kernel and d0 the smallest nonzero
    eigenvalue of X0*X0.  Singular values below rel_tol * sigma_max count as
    zero.
    """
    X0 = np.asarray(X0, dtype=complex)
    u, sing, vh = np.linalg.svd(X0, full_matrices=True)
    smax = sing[0] if sing.size else 0.0
    small = sing <= rel_tol * max(smax, 1.0)
    n_kernel = int(np.sum(small)) + (X0.shape[1] - sing.size)
    if n_kernel == 0:
        raise DegenerateKernel("Ker X0 is trivial")
    kernel_basis = vh.conj().T[:, X0.shape[1] - n_kernel:]
    P = kernel_basis @ kernel_basis.conj().T
    nonzero = sing[~small]
    d0 = float(nonzero[-1] ** 2) if nonzero.size else 0.0
    return linalg.herm(P), n_kernel, d0


def solve_Z(family, P, n=None, cond_cap=1e12):
    """First-order solution operator: X0*X0 Z = -X0*X1 P on Ker(X0)^perp."""
    if n is None:
        n = int(round(np.real(np.trace(P))))
    gram = family.X0.conj().T @ family.X0
    rhs = -family.X0.conj().T @ (family.X1 @ P)
    return linalg.restricted_solve(linalg.herm(gram), rhs, n, cond_cap)


def solve_Ztilde(family, P, n=None, cond_cap=1e12):
    """Companion solution operator: X0*X0 Zt = -Y0*Y2 P on Ker(X0)^perp."""
    if n is None:
        n = int(round(np.real(np.trace(P))))
    gram = family.X0.conj().T @ family.X0
    rhs = -family.Y0.conj().T @ (family.Y2 @ P)
    return linalg.restricted_solve(linalg.herm(gram), rhs, n, cond_cap)


def _range_projector_apply(X0, kernel_basis, w):
    """(I - proj onto Ran X0) @ w, via QR of X0 restricted off the kernel."""
    dim = X0.shape[1]
    n = kernel_basis.shape[1]
    if n < dim:
        # complement basis of the kernel
        full = np.linalg.qr(
            np.concatenate([kernel_basis,
                            np.eye(dim, dtype=complex)], axis=1))[0][:, :dim]
        comp = full[:, n:]
        q, _ = np.linalg.qr(X0 @ comp)
        return w - q @ (q.conj().T @ w)
    return w


def compute_threshold(family, delta=None, tau0=None, cond_cap=1e12):
    """All threshold objects of the pencil in one pass."""
    P, n, d0 = kernel_projection(family.X0)
    w, v = linalg.eigh_herm(P)
    kernel_basis = v[:, np.argsort(w)[::-1][:n]]
    Z = solve_Z(family, P, n, cond_cap)
    Zt = solve_Ztilde(family, P, n, cond_cap)

    # R = P_* X1 |_N with P_* the projector onto Ker X0^* (complement of Ran X0)
    R = _range_projector_apply(family.X0, kernel_basis, family.X1 @ P)

    X0Z = family.X0 @ Z
    X0Zt = family.X0 @ Zt
    cross_y = family.Y2.conj().T @ family.Y1
    S_block = P @ (family.X1.conj().T @ R)          # = P X1* P_* X1 P
    C_block = (-X0Z.conj().T @ X0Zt - X0Zt.conj().T @ X0Z
               + P @ (cross_y + cross_y.conj().T) @ P)
    D_block = (-X0Zt.conj().T @ X0Zt
               + P @ (family.Q + family.lam * family.Q0) @ P)
    S_block = linalg.herm(P @ S_block @ P)
    C_block = linalg.herm(P @ C_block @ P)
    D_block = linalg.herm(P @ D_block @ P)

    n_blocks = _n_operator_blocks(family, P, Z, Zt, R)

    consts = family.form_constants
    if delta is None:
        kappa = consts.get("kappa", 1.0)
        delta = kappa * d0 / 52.0
    if tau0 is None:
        tau0 = _default_tau0(family, delta)
    cstar = consts.get("cstar_check", 0.0)
    return ThresholdData(P, n, d0, kernel_basis, Z, Zt, R,
                         S_block, C_block, D_block, *n_blocks,
                         delta=float(delta), tau0=float(tau0),
                         cstar_check=float(cstar))


def _default_tau0(family, delta):
    consts = family.form_constants
    c1 = consts.get("c1", 1.0)
    c2 = consts.get("c2", 0.0)
    c3 = consts.get("c3", 0.0)
    C1 = consts.get("C1", 0.0)
    nx1 = np.linalg.norm(family.X1, 2)
    nq0 = np.linalg.norm(family.Q0, 2)
    denom = (2 + c1 ** 2 + c2) * nx1 ** 2 + C1 + c3 + abs(family.lam) * nq0
    return float(np.sqrt(delta / max(denom, 1e-300)))


def _n_operator_blocks(family, P, Z, Zt, R):
    """Homogeneous blocks of the cubic operator: N = t^3 N11 + t^2 e N12 + ..."""
    X0, X1 = family.X0, family.X1
    Y0, Y1, Y2 = family.Y0, family.Y1, family.Y2
    Q, Q0, lam = family.Q, family.Q0, family.lam

    def sym(a):
        return a + a.conj().T

    X1Z, X1Zt = X1 @ Z, X1 @ Zt
    X0Z, X0Zt = X0 @ Z, X0 @ Zt
    Y0Z, Y0Zt = Y0 @ Z, Y0 @ Zt
    Y1Z, Y1Zt = Y1 @ Z, Y1 @ Zt
    Y2Z, Y2Zt = Y2 @ Z, Y2 @ Zt
    Y1P, Y2P = Y1 @ P, Y2 @ P

    N11 = sym(X1Z.conj().T @ R)
    N12 = (sym(X1Zt.conj().T @ R)
           + sym(X1Z.conj().T @ X0Zt)
           + sym(Y2Z.conj().T @ Y0Z)
           + sym(Y2Z.conj().T @ Y1P)
           + sym(Y2P.conj().T @ Y1Z))
    N21 = (sym(X0Zt.conj().T @ X1Zt)
           + sym(Y2Z.conj().T @ Y0Zt)
           + sym(Y2Zt.conj().T @ Y0Z)
           + sym(Y2Zt.conj().T @ Y1P)
           + sym(Y1Zt.conj().T @ Y2P)
           + sym(Z.conj().T @ Q @ P)
           + lam * sym(Z.conj().T @ Q0 @ P))
    N22 = (sym(Y0Zt.conj().T @ Y2Zt)
           + sym(Zt.conj().T @ Q @ P)
           + lam * sym(Zt.conj().T @ Q0 @ P))
    return (linalg.herm(N11), linalg.herm(N12),
            linalg.herm(N21), linalg.herm(N22))


# ---------------------------------------------------------------------------
# germ, L, N, corrector


def germ(th, theta):
    """Full-space germ S(theta) = th1^2 S + th1 th2 C + th2^2 D, P-supported."""
    t1, t2 = theta
    return t1 ** 2 * th.S_block + t1 * t2 * th.C_block + t2 ** 2 * th.D_block


def germ_restricted(th, theta):
    """Germ as an n x n matrix in the kernel basis."""
    u = th.kernel_basis
    return linalg.herm(u.conj().T @ germ(th, theta) @ u)


def L_operator(th, t, eps):
    """L(t, eps) = t^2 S + t eps C + eps^2 D on the kernel (full-space form)."""
    return t ** 2 * th.S_block + t * eps * th.C_block + eps ** 2 * th.D_block


def n_operator(th, t, eps):
    """N(t, eps) = t^3 N11 + t^2 eps N12 + t eps^2 N21 + eps^3 N22."""
    return (t ** 3 * th.N11 + t ** 2 * eps * th.N12
            + t * eps ** 2 * th.N21 + eps ** 3 * th.N22)


def _kernel_eig(th, t, eps, tol=1e-9):
    """Eigendecomposition of L(t,eps) restricted to the kernel; positivity check."""
    u = th.kernel_basis
    L_n = linalg.herm(u.conj().T @ L_operator(th, t, eps) @ u)
    w, v = np.linalg.eigh(L_n)
    floor = th.cstar_check * (t ** 2 + eps ** 2)
    if floor > 0 and w.min() < floor - tol * max(abs(floor), 1.0):
        raise NonPositiveL(
            f"L(t,eps) eigenvalue {w.min():.3e} below bound {floor:.3e}")
    return L_n, w, v


def exp_L_P(th, t, eps, s, eig=None):
    """exp(-L(t,eps) s) P as a full-space matrix."""
    u = th.kernel_basis
    if eig is None:
        _, w, v = _kernel_eig(th, t, eps)
    else:
        w, v = eig
    core = (v * np.exp(-w * s)) @ v.conj().T
    return u @ core @ u.conj().T


def corrector_K(th, t, eps, s):
    """Corrector K(t,eps,s): oscillating pair plus the closed-form integral."""
    u = th.kernel_basis
    _, w, v = _kernel_eig(th, t, eps)
    e_full = u @ ((v * np.exp(-w * s)) @ v.conj().T) @ u.conj().T
    first = (t * th.Z + eps * th.Ztilde) @ e_full
    second = e_full @ (t * th.Z + eps * th.Ztilde).conj().T
    n_ker = u.conj().T @ n_operator(th, t, eps) @ u
    ntil = v.conj().T @ n_ker @ v
    integral = v @ (linalg.confluent_weights(w, s) * ntil) @ v.conj().T
    return first + second - u @ integral @ u.conj().T


def exponential_remainder(family, th, t, eps, s):
    """Norm of exp(-Bs) - exp(-Ls)P - K and the two reference envelopes."""
    tau = np.hypot(t, eps)
    if tau > th.tau0 * (1 + 1e-12):
        raise OutsideThresholdBall(f"tau={tau:.3e} exceeds tau0={th.tau0:.3e}")
    B = family.B(t, eps)
    approx = exp_L_P(th, t, eps, s) + corrector_K(th, t, eps, s)
    rem = linalg.herm_expm(B, s) - approx
    nrm = linalg.opnorm(rem)
    decay = np.exp(-0.5 * th.cstar_check * tau ** 2 * s)
    env_pos = decay / s if s > 0 else np.inf
    env_nonneg = decay / (s + 1.0)
    return float(nrm), float(env_pos), float(env_nonneg)


# ---------------------------------------------------------------------------
# threshold projector / order checks


def spectral_projector(family, th, t, eps):
    """Projector of B(t,eps) onto [0, 2*delta]; rank must equal n."""
    B = family.B(t, eps)
    w, v = np.linalg.eigh(B)
    keep = w <= 2.0 * th.delta
    rank = int(np.sum(keep))
    if rank != th.n:
        raise RankMismatch(
            f"rank F = {rank} != n = {th.n} (delta/tau0 configuration invalid)")
    vv = v[:, keep]
    return vv @ vv.conj().T


def threshold_projector_checks(family, th, tau, theta):
    """Norms of F - P and F - P - tau*F1 at one point of the tau-ball."""
    t, eps = tau * theta[0], tau * theta[1]
    F = spectral_projector(family, th, t, eps)
    F1 = (theta[0] * (th.Z + th.Z.conj().T)
          + theta[1] * (th.Ztilde + th.Ztilde.conj().T))
    n1 = linalg.opnorm(F - th.P)
    n2 = linalg.opnorm(F - th.P - tau * F1)
    return {"F_minus_P": float(n1), "F_minus_P_tauF1": float(n2)}


def threshold_order_norms(family, th, tau, theta):
    """The four threshold-approximation residual norms at one tau.

    Returns ||F-P||, ||F-P-tau F1||, ||BF - tau^2 S P||, and
    ||BF - tau^2 S P - tau^3 K|| with K = K0 + N.
    """
    t, eps = tau * theta[0], tau * theta[1]
    F = spectral_projector(family, th, t, eps)
    B = family.B(t, eps)
    checks = threshold_projector_checks(family, th, tau, theta)
    S_full = germ(th, theta)        # equals S(theta) P on the kernel
    BF = B @ F
    n3 = linalg.opnorm(BF - tau ** 2 * S_full)
    K0 = (theta[0] * (th.Z @ S_full + S_full @ th.Z.conj().T)
          + theta[1] * (th.Ztilde @ S_full + S_full @ th.Ztilde.conj().T))
    N_theta = n_operator(th, theta[0], theta[1])
    n4 = linalg.opnorm(BF - tau ** 2 * S_full - tau ** 3 * (K0 + N_theta))
    checks["BF_minus_SP"] = float(n3)
    checks["BF_minus_SP_K"] = float(n4)
    return checks


def expanded_tau_start(family, th, theta, max_doublings=16):
    """Largest dyadic multiple of tau0/2 where the rank-n window survives.

    The sampled tau0 is very conservative; order measurements start from the
    largest tau at which the spectral projector still captures exactly n
    eigenvalues below the gap (guarded by the rank check), with one halving
    of safety margin.
    """
    tau = 0.5 * th.tau0
    for _ in range(max_doublings):
        cand = 2.0 * tau
        try:
            spectral_projector(family, th, cand * theta[0], cand * theta[1])
        except RankMismatch:
            break
        tau = cand
    return 0.5 * tau


def dyadic_order_sweep(family, th, theta, n_points=8, start="auto"):
    """Residual norms over a dyadic tau sweep.

    ``start`` is the largest tau (``"auto"`` expands from tau0 while the
    rank-n window check passes).
    """
    if start == "auto":
        start = expanded_tau_start(family, th, theta)
    taus = float(start) * 0.5 ** np.arange(n_points)
    rows = []
    for tau in taus:
        rows.append((float(tau), threshold_order_norms(family, th, tau, theta)))
    return rows


# ---------------------------------------------------------------------------
# germ eigen-structure: N0 / N* split and the M-decomposition


def germ_eigendata(th, theta):
    """Eigenpairs (gamma_l, omega_l) of S(theta) and N(theta) in that basis."""
    S_n = germ_restricted(th, theta)
    gam, om = np.linalg.eigh(S_n)
    u = th.kernel_basis
    N_theta = n_operator(th, theta[0], theta[1])
    N_n = u.conj().T @ N_theta @ u
    N_in_basis = om.conj().T @ N_n @ om
    return gam, om, linalg.herm(N_in_basis)


def n_star_offdiagonal(th, theta):
    """Off-diagonal (germ-basis) part N_* of P N(theta) P; zero when n = 1."""
    gam, om, N_basis = germ_eigendata(th, theta)
    N_star = N_basis - np.diag(np.diag(N_basis))
    return N_star, gam


def m_decomposition_check(th, tau, theta, s, quad_tol=1e-11, degen_tol=1e-8):
    """Closed-form M0 + M* versus adaptive quadrature of the M integral.

    M0 uses the diagonal mu_l of N(theta) in the germ basis; M* uses the
    off-diagonal entries with exponential-difference weights (confluent limit
    on degenerate pairs).  Returns the two matrices, their deviation, and a
    degeneracy warning flag.
    """
    from scipy.integrate import quad_vec

    gam, om, N_basis = germ_eigendata(th, theta)
    lam = tau ** 2 * gam
    mu = np.real(np.diag(N_basis))
    m0 = np.diag(mu * s * np.exp(-lam * s))
    n_star = N_basis - np.diag(np.diag(N_basis))
    m_star = linalg.confluent_weights(lam, s) * n_star
    closed = m0 + m_star

    def integrand(st):
        left = np.exp(-lam * (s - st))
        right = np.exp(-lam * st)
        return (left[:, None] * N_basis) * right[None, :]

    quad, _ = quad_vec(integrand, 0.0, s, epsabs=quad_tol, epsrel=quad_tol)
    dev = float(np.abs(closed - quad).max())
    gaps = np.abs(gam[:, None] - gam[None, :])[np.triu_indices(len(gam), 1)]
    degenerate = bool(gaps.size and gaps.min() < degen_tol * max(gam.max(), 1.0))
    return {"closed": closed, "quadrature": quad, "deviation": dev,
            "degenerate_pair": degenerate, "M0": m0, "Mstar": m_star}


# ---------------------------------------------------------------------------
# bordered pencil


@dataclass
class BorderedFamily:
    """Pencil B = M* Bhat M together with its hatted reference pencil.

    ``hat`` is the reference family (its Q0 must be the identity), ``M`` the
    isomorphism.  The base family is derived: X = Xhat M, etc., Q0 = M*M.
    """

    hat: AbstractFamily
    M: np.ndarray
    base: AbstractFamily = None

    def __post_init__(self):
        eye = np.eye(self.hat.dim_H)
        if np.abs(self.hat.Q0 - eye).max() > 1e-10:
            raise ValueError("reference pencil must carry Q0 = identity")
        if self.base is None:
            M = self.M
            h = self.hat
            self.base = AbstractFamily(
                X0=h.X0 @ M, X1=h.X1 @ M,
                Y0=h.Y0 @ M, Y1=h.Y1 @ M, Y2=h.Y2 @ M,
                Q=M.conj().T @ h.Q @ M,
                Q0=M.conj().T @ M,
                lam=h.lam,
                form_constants=dict(h.form_constants))

    @property
    def G(self):
        mm = self.M @ self.M.conj().T
        return np.linalg.inv(mm)


def bordered_data(bf):
    """Threshold data of both pencils plus the bordered kernel objects."""
    th = compute_threshold(bf.base)
    th_hat = compute_threshold(bf.hat)
    uh = th_hat.kernel_basis
    G_n = linalg.herm(uh.conj().T @ bf.G @ uh)
    M0_n = linalg.inv_sqrtm_herm(G_n)
    Minv = np.linalg.inv(bf.M)
    ZG = bf.M @ th.Z @ Minv @ th_hat.P
    ZtG = bf.M @ th.Ztilde @ Minv @ th_hat.P
    return {"th": th, "th_hat": th_hat, "G_n": G_n, "M0_n": M0_n,
            "ZG": ZG, "ZtG": ZtG, "Minv": Minv}


def bordered_NG(bf, data, t, eps):
    """N_G(t,eps) = Phat (M*)^{-1} N(t,eps) M^{-1} Phat."""
    th, th_hat = data["th"], data["th_hat"]
    Minv = data["Minv"]
    N = n_operator(th, t, eps)
    return th_hat.P @ Minv.conj().T @ N @ Minv @ th_hat.P


def bordered_principal(bf, data, t, eps, s):
    """M0 exp(-M0 Lhat M0 s) M0 Phat as a full matrix."""
    th_hat = data["th_hat"]
    uh = th_hat.kernel_basis
    M0 = data["M0_n"]
    L_n = linalg.herm(uh.conj().T @ L_operator(th_hat, t, eps) @ uh)
    H = linalg.herm(M0 @ L_n @ M0)
    w, v = np.linalg.eigh(H)
    core = M0 @ ((v * np.exp(-w * s)) @ v.conj().T) @ M0
    return uh @ core @ uh.conj().T


def bordered_corrector(bf, data, t, eps, s):
    """K_G(t,eps,s) for the bordered pencil (kernel-space closed forms)."""
    th_hat = data["th_hat"]
    uh = th_hat.kernel_basis
    M0 = data["M0_n"]
    L_n = linalg.herm(uh.conj().T @ L_operator(th_hat, t, eps) @ uh)
    H = linalg.herm(M0 @ L_n @ M0)
    w, v = np.linalg.eigh(H)
    core = M0 @ ((v * np.exp(-w * s)) @ v.conj().T) @ M0
    E_full = uh @ core @ uh.conj().T
    ZG_t = t * data["ZG"] + eps * data["ZtG"]
    NG = bordered_NG(bf, data, t, eps)
    NG_n = uh.conj().T @ NG @ uh
    inner = M0 @ NG_n @ M0
    ntil = v.conj().T @ inner @ v
    J = v @ (linalg.confluent_weights(w, s) * ntil) @ v.conj().T
    J_full = uh @ (M0 @ J @ M0) @ uh.conj().T
    return ZG_t @ E_full + E_full @ ZG_t.conj().T - J_full


def bordered_remainder(bf, t, eps, s, data=None):
    """Norm of M exp(-B s) M* minus bordered principal term minus K_G."""
    if data is None:
        data = bordered_data(bf)
    th = data["th"]
    tau = np.hypot(t, eps)
    if tau > th.tau0 * (1 + 1e-12):
        raise OutsideThresholdBall(f"tau={tau:.3e} exceeds tau0={th.tau0:.3e}")
    B = bf.base.B(t, eps)
    lhs = bf.M @ linalg.herm_expm(B, s) @ bf.M.conj().T
    rem = lhs - bordered_principal(bf, data, t, eps, s) \
        - bordered_corrector(bf, data, t, eps, s)
    nrm = linalg.opnorm(rem)
    decay = np.exp(-0.5 * th.cstar_check * tau ** 2 * s)
    env_pos = decay / s if s > 0 else np.inf
    env_nonneg = decay / (s + 1.0)
    return {"remainder_norm": float(nrm), "envelope_s_pos": float(env_pos),
            "envelope_s_nonneg": float(env_nonneg)}


# ---------------------------------------------------------------------------
# random family generator (shared by tests and the abstract-check command)


def estimate_constants(family, rng, t_samples=9, n_probe=24):
    """Sample the defining inequalities to estimate the form constants.

    All estimates carry a 1.1 safety inflation.  Returns the dict also
    stored in ``family.form_constants``.
    """
    dim = family.dim_H
    taus = np.linspace(-1.0, 1.0, t_samples)
    c1_sq = 0.0
    for t in taus:
        xt, yt = family.X(t), family.Y(t)
        gram_x = linalg.herm(xt.conj().T @ xt)
        gram_y = linalg.herm(yt.conj().T @ yt)
        wx, vx = np.linalg.eigh(gram_x)
        # generalized bound ||Yu||^2 <= c1^2 ||Xu||^2 needs Ker X(t) in Ker Y(t);
        # sample the ratio on probes orthogonal to Ker X(t)
        for _ in range(n_probe):
            u = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
            u -= vx[:, wx < 1e-12 * max(wx.max(), 1.0)] @ (
                vx[:, wx < 1e-12 * max(wx.max(), 1.0)].conj().T @ u)
            nx = np.real(u.conj() @ gram_x @ u)
            ny = np.real(u.conj() @ gram_y @ u)
            if nx > 1e-14:
                c1_sq = max(c1_sq, ny / nx)
    c1 = float(np.sqrt(c1_sq))

    def c_of_nu(nu):
        worst = 0.0
        for t in taus:
            xt = family.X(t)
            mat = linalg.herm(family.Y2.conj().T @ family.Y2
                              - nu * xt.conj().T @ xt)
            worst = max(worst, float(np.linalg.eigvalsh(mat).max()))
        return max(worst, 0.0)

    C1 = 1.1 * c_of_nu(1.0)
    nq = float(np.linalg.norm(family.Q, 2))
    kappa, c0, c2, c3 = 1.0, 1.1 * nq, 0.0, 1.1 * nq
    nu_star = kappa ** 2 / (16.0 * max(c1 ** 2, 1e-14))
    c4 = 4.0 / kappa * c1 ** 2 * 1.1 * c_of_nu(nu_star)
    q0_inv = float(np.linalg.norm(np.linalg.inv(family.Q0), 2))
    beta = family.lam / q0_inv - c0 - c4 if family.lam >= 0 else \
        family.lam * float(np.linalg.norm(family.Q0, 2)) - c0 - c4

    # lower bound A(t) >= cstar t^2 sampled over small t
    cstar = np.inf
    for t in np.geomspace(1e-3, 1.0, 12):
        wmin = float(np.linalg.eigvalsh(family.A(t)).min())
        cstar = min(cstar, wmin / t ** 2)
    cstar = max(cstar, 0.0) / 1.1
    ccheck = 0.5 * min(kappa * cstar, 2.0 * max(beta, 0.0))
    consts = {"c0": c0, "c1": c1, "c2": c2, "c3": c3, "c4": c4,
              "beta": float(beta), "kappa": kappa, "C1": float(C1),
              "cstar": float(cstar), "cstar_check": float(ccheck)}
    family.form_constants.update(consts)
    return consts


def random_family(rng, dim_H=8, dim_Hstar=None, dim_Htilde=None, n=2,
                  scale_Y2=1.0, scale_Q=1.0, degenerate_copies=False):
    """Random pencil satisfying the structural conditions.

    Y(t) = C X(t) with a random contraction-scaled C, so the subordination
    condition holds for every t with c1 = ||C||.  With
    ``degenerate_copies=True`` the family is two identical diagonal blocks,
    forcing every germ eigenvalue to be doubly degenerate.
    """
    dim_Hstar = dim_Hstar or dim_H + 2
    dim_Htilde = dim_Htilde or dim_H

    def cplx(shape, sc=1.0):
        return sc * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    X0 = cplx((dim_Hstar, dim_H))
    # carve an exact n-dimensional kernel
    q, _ = np.linalg.qr(cplx((dim_H, n)))
    X0 = X0 @ (np.eye(dim_H) - q @ q.conj().T)
    X1 = cplx((dim_Hstar, dim_H))
    C = cplx((dim_Htilde, dim_Hstar), 0.5)
    Y0, Y1 = C @ X0, C @ X1
    Y2 = cplx((dim_Htilde, dim_H), scale_Y2)
    Q = linalg.herm(cplx((dim_H, dim_H), scale_Q))
    Q0 = np.eye(dim_H) + 0.3 * linalg.herm(cplx((dim_H, dim_H), 0.3))
    w = np.linalg.eigvalsh(Q0)
    if w.min() < 0.2:
        Q0 += (0.2 - w.min()) * np.eye(dim_H)

    fam = AbstractFamily(X0, X1, Y0, Y1, Y2, Q, Q0, lam=0.0)
    if degenerate_copies:
        def blk(a):
            z = np.zeros((2 * a.shape[0], 2 * a.shape[1]), dtype=complex)
            z[:a.shape[0], :a.shape[1]] = a
            z[a.shape[0]:, a.shape[1]:] = a
            return z
        fam = AbstractFamily(blk(X0), blk(X1), blk(Y0), blk(Y1), blk(Y2),
                             blk(Q), blk(Q0), lam=0.0)
    consts = estimate_constants(fam, rng)
    q0_inv = float(np.linalg.norm(np.linalg.inv(fam.Q0), 2))
    fam.lam = 1.1 * q0_inv * (consts["c0"] + consts["c4"]) + 0.5
    estimate_constants(fam, rng)
    return fam
