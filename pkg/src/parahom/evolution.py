"""Semigroup evolution on a periodic box: fine flow by Bloch synthesis,
homogenized flow as a Fourier multiplier, correctors, and source terms.

Everything is stored in the scaled picture: the physical box [0, L)^d with
L = eps * n_cells * period is relabeled to y = x/eps, so fields live on the
torus of n_cells lattice cells with G = n_cells*(2*N+1) grid points per axis.
The scaling transformation is unitary, so L2 norms and relative errors agree
with the physical picture.  The fine flow at physical time s applies the
fiber exponentials at time s/eps^2.
"""

from dataclasses import dataclass, field as dfield

import numpy as np

from . import fields as fd
from . import fibers as fb
from . import linalg
from .errors import (InsufficientDecades, NonPositiveEffective,
                     QuadratureUnderResolved, RegimeViolation)


def _signed_residue(m, n_cells):
    half = n_cells // 2
    return ((m + half) % n_cells) - half


@dataclass
class EvolutionSetup:
    """Box discretization bound to one (problem, cell solution, eps)."""

    cell: "object"              # CellSolution
    ng: "object"                # NGCoefficients
    constants: "object"         # ProblemConstants
    eps: float
    n_cells: int
    trunc: fd.Truncation
    _flows: dict = dfield(default_factory=dict, repr=False)
    _fibers: dict = dfield(default_factory=dict, repr=False)

    def __post_init__(self):
        problem = self.cell.problem
        if not problem.lattice.is_rectangular:
            raise NotImplementedError("evolution boxes need rectangular lattices")
        d = problem.lattice.dimension
        m_cell = 2 * self.trunc.n_modes + 1
        self.box_shape = (self.n_cells * m_cell,) * d
        self.d = d
        self.n = problem.n
        self._build_index_maps()
        self._lam_grid = None
        self._nsym_grid = None
        self._b_grid = None
        self._tiles = {}

    # -- frequency bookkeeping ------------------------------------------------

    def _build_index_maps(self):
        d, n_cells = self.d, self.n_cells
        N = self.trunc.n_modes
        axes = [np.fft.fftfreq(g, 1.0 / g).astype(int) for g in self.box_shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        m_idx = np.stack([a.ravel() for a in mesh], axis=-1)   # (G^d, d)
        r = _signed_residue(m_idx, n_cells)
        j = (m_idx - r) // n_cells
        if np.abs(j).max() > N:
            raise ValueError("box frequency fell outside the cell truncation")
        self.freq_r = r                     # per-axis quasimomentum residues
        self.freq_fiber = np.ravel_multi_index(
            (r + n_cells // 2).T, (n_cells,) * d)
        self.freq_modepos = np.ravel_multi_index((j + N).T, (2 * N + 1,) * d)
        lat = self.cell.problem.lattice
        self.freq_zeta = m_idx @ (lat.dual_basis / n_cells)    # scaled frequency
        # quasimomentum vector of each fiber id
        rs = np.stack(np.meshgrid(
            *[np.arange(-(n_cells // 2), n_cells - n_cells // 2)] * d,
            indexing="ij"), axis=-1).reshape(-1, d)
        order = np.ravel_multi_index((rs + n_cells // 2).T, (n_cells,) * d)
        self.fiber_k = np.empty((n_cells ** d, d))
        self.fiber_k[order] = rs @ (lat.dual_basis / n_cells)

    @property
    def n_fibers(self):
        return self.n_cells ** self.d

    def box_volume(self):
        return self.cell.problem.lattice.cell_volume * self.n_fibers

    def box_norm(self, values):
        """L2 norm over the box of a (G^d, n) grid-values array."""
        g_total = int(np.prod(self.box_shape))
        return float(np.linalg.norm(values) * np.sqrt(self.box_volume() / g_total))

    def random_band_limited(self, rng, band=None):
        """Random field with box frequencies limited to |m| <= band per axis."""
        g = self.box_shape[0]
        band = band if band is not None else g // 4
        coeffs = np.zeros((*self.box_shape, self.n), dtype=complex)
        axes = [np.fft.fftfreq(gg, 1.0 / gg).astype(int) for gg in self.box_shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        mask = np.ones(self.box_shape, dtype=bool)
        for a in mesh:
            mask &= np.abs(a) <= band
        vals = rng.standard_normal((*self.box_shape, self.n)) \
            + 1j * rng.standard_normal((*self.box_shape, self.n))
        coeffs[mask] = vals[mask]
        out = np.fft.ifftn(coeffs, axes=tuple(range(self.d)))
        flat = out.reshape(-1, self.n)
        return flat / max(self.box_norm(flat), 1e-300)

    # -- Bloch transform ------------------------------------------------------

    def decompose(self, values):
        """Grid values (G^d, n) -> per-fiber coefficient array (F, M, n)."""
        v = values.reshape(*self.box_shape, self.n)
        vhat = np.fft.fftn(v, axes=tuple(range(self.d))).reshape(-1, self.n)
        out = np.zeros((self.n_fibers, self.trunc.size, self.n), dtype=complex)
        out[self.freq_fiber, self.freq_modepos] = vhat
        return out

    def recompose(self, fiber_coeffs):
        vhat = fiber_coeffs[self.freq_fiber, self.freq_modepos]
        v = np.fft.ifftn(vhat.reshape(*self.box_shape, self.n),
                         axes=tuple(range(self.d)))
        return v.reshape(-1, self.n)

    # -- fiber flows ----------------------------------------------------------

    def fiber(self, idx):
        if idx not in self._fibers:
            self._fibers[idx] = fb.assemble_fiber(
                self.cell.problem, self.trunc, self.fiber_k[idx], self.eps,
                self.constants, check=False)
        return self._fibers[idx]

    def flow(self, idx):
        if idx not in self._flows:
            self._flows[idx] = fb.FiberFlow(self.fiber(idx).matrix)
        return self._flows[idx]

    # -- pointwise multipliers ------------------------------------------------

    def cell_field_on_box(self, cell_field):
        """Tile a cell-periodic field onto the box grid: (G^d, p, q)."""
        m_cell = 2 * self.trunc.n_modes + 1
        coeffs = fd.fft_coeffs(cell_field)
        p, q = coeffs.shape[-2:]
        small = np.zeros((*(m_cell,) * self.d, p, q), dtype=complex)
        N = self.trunc.n_modes
        modes = self.trunc.modes
        src = tuple(modes[:, ax] % cell_field.shape[ax] for ax in range(self.d))
        dst = tuple(modes[:, ax] % m_cell for ax in range(self.d))
        small[dst] = coeffs[src]
        one_cell = fd.field_from_coeffs(small)
        tiled = np.tile(one_cell, (*(self.n_cells,) * self.d, 1, 1))
        return tiled.reshape(-1, p, q)

    def apply_symbol(self, values, symbol):
        """Fourier multiplier with a matrix symbol of the scaled frequency."""
        q = values.shape[-1]
        v = values.reshape(*self.box_shape, q)
        vhat = np.fft.fftn(v, axes=tuple(range(self.d))).reshape(-1, q)
        out = np.einsum("gpq,gq->gp", symbol, vhat)
        p = out.shape[-1]
        out = np.fft.ifftn(out.reshape(*self.box_shape, p),
                           axes=tuple(range(self.d)))
        return out.reshape(-1, p)


# ---------------------------------------------------------------------------
# smoothing operator


def brillouin_mask(setup, tol=1e-12):
    """Characteristic function of the Brillouin zone on the box frequencies."""
    lat = setup.cell.problem.lattice
    zeta = setup.freq_zeta
    keep = np.ones(len(zeta), dtype=bool)
    for b in lat.dual_shell(2):
        keep &= (np.sum(zeta ** 2, axis=1)
                 <= np.sum((zeta - b) ** 2, axis=1) + tol)
    return keep


def smoothing_apply(setup, values):
    """Sharp Fourier cutoff to frequencies inside the Brillouin zone / eps."""
    mask = brillouin_mask(setup)
    v = values.reshape(*setup.box_shape, setup.n)
    vhat = np.fft.fftn(v, axes=tuple(range(setup.d))).reshape(-1, setup.n)
    vhat[~mask] = 0.0
    out = np.fft.ifftn(vhat.reshape(*setup.box_shape, setup.n),
                       axes=tuple(range(setup.d)))
    return out.reshape(-1, setup.n)


# ---------------------------------------------------------------------------
# flows


def _f_values(setup):
    problem = setup.cell.problem
    if problem.f_is_identity:
        return None
    return setup.cell_field_on_box(problem.f_field())


def evolve_fine(setup, phi, s):
    """u_eps(., s) = f^eps exp(-B_eps s) (f^eps)* phi via Bloch synthesis."""
    fvals = _f_values(setup)
    w = phi if fvals is None else np.einsum(
        "gqp,gq->gp", fvals.conj(), phi)
    coeffs = setup.decompose(w)
    s_scaled = s / setup.eps ** 2
    out = np.empty_like(coeffs)
    m = setup.trunc.size
    for idx in range(setup.n_fibers):
        vec = coeffs[idx].reshape(m * setup.n)
        out[idx] = setup.flow(idx).apply(s_scaled, vec).reshape(m, setup.n)
    u = setup.recompose(out)
    if fvals is not None:
        u = np.einsum("gpq,gq->gp", fvals, u)
    return u


def _effective_symbols(setup, check=True):
    """Stack of f0 L_hat(zeta, eps) f0 over all box frequencies."""
    if setup._lam_grid is None:
        cell = setup.cell
        eps = setup.eps
        syms = cell.B0_symbols(setup.freq_zeta, eps)
        syms = 0.5 * (syms + np.swapaxes(syms.conj(), -1, -2))
        w, v = np.linalg.eigh(syms)
        cc = setup.constants.cstar_check
        if check and cc > 0.0:
            tau_sq = np.sum(setup.freq_zeta ** 2, axis=1) + eps ** 2
            bad = w[:, 0] < cc * tau_sq - 1e-9 * np.maximum(cc * tau_sq, 1.0)
            if bad.any():
                raise NonPositiveEffective(
                    "effective symbol loses positivity on the box grid")
        setup._lam_grid = (w, v)
    return setup._lam_grid


def evolve_homogenized(setup, phi, s):
    """u0(., s) = f0 exp(-B0 s) f0 phi as a Fourier multiplier."""
    w, v = _effective_symbols(setup)
    s_scaled = s / setup.eps ** 2
    f0 = setup.cell.f0
    vh = np.swapaxes(v.conj(), -1, -2)
    sym = np.einsum("pq,gqr,gr,grt,tu->gpu", f0, v,
                    np.exp(-w * s_scaled), vh, f0)
    return setup.apply_symbol(phi, sym)


def _ng_symbols(setup):
    if setup._nsym_grid is None:
        setup._nsym_grid = setup.ng.symbols(setup.freq_zeta, setup.eps)
    return setup._nsym_grid


def _b_symbols_grid(setup):
    if setup._b_grid is None:
        bs = setup.cell.problem.b_symbols
        setup._b_grid = np.tensordot(setup.freq_zeta, bs, axes=(1, 0))
    return setup._b_grid


def _tile(setup, name, field):
    if name not in setup._tiles:
        setup._tiles[name] = setup.cell_field_on_box(field)
    return setup._tiles[name]


def corrector_apply(setup, phi, s, variant="with_smoothing"):
    """Corrector field K_eps(s) phi (three terms; sharp cutoff optional).

    ``variant`` selects the smoothed corrector or the plain one; the plain
    variant requires s >= eps^2.
    """
    if variant not in ("with_smoothing", "without_smoothing"):
        raise ValueError(variant)
    if variant == "without_smoothing" and s < setup.eps ** 2:
        raise RegimeViolation(
            f"plain corrector needs s >= eps^2, got s={s}, eps^2={setup.eps**2}")
    eps = setup.eps
    cell = setup.cell
    problem = cell.problem
    smooth = variant == "with_smoothing"

    phi_s = smoothing_apply(setup, phi) if smooth else phi
    w, v = _effective_symbols(setup)
    f0 = cell.f0
    vh = np.swapaxes(v.conj(), -1, -2)
    s_scaled = s / eps ** 2

    def hom_flow(vals, t):
        sym = np.einsum("pq,gqr,gr,grt,tu->gpu", f0, v, np.exp(-w * t), vh, f0)
        return setup.apply_symbol(vals, sym)

    # oscillating multiplier term: (Lambda_G^eps b(D) + tilde-Lambda_G^eps) u0
    u0s = hom_flow(phi_s, s_scaled)
    lam_g = _tile(setup, "LambdaG", cell.LambdaG)
    lam_gt = _tile(setup, "LambdaTildeG", cell.LambdaTildeG)
    b_grid = _b_symbols_grid(setup)
    bd_u0 = setup.apply_symbol(u0s, b_grid)
    t1 = np.einsum("gpq,gq->gp", lam_g, bd_u0) \
        + eps * np.einsum("gpq,gq->gp", lam_gt, u0s)

    # mirrored term: hom flow of the adjoint multiplier applied to phi
    wadj = np.einsum("gqp,gq->gp", lam_g.conj(), phi)
    wadj = setup.apply_symbol(wadj, np.swapaxes(b_grid.conj(), -1, -2))
    wadj = wadj + eps * np.einsum("gqp,gq->gp", lam_gt.conj(), phi)
    if smooth:
        wadj = smoothing_apply(setup, wadj)
    t2 = hom_flow(wadj, s_scaled)

    # constant-coefficient integral term, closed form per frequency
    nsym = _ng_symbols(setup)
    inner = np.einsum("pq,gqr,rt->gpt", f0, nsym, f0)
    inner_basis = np.einsum("gqp,gqr,grt->gpt", v.conj(), inner, v)
    lam_pairs = linalg.confluent_weights_batch(w, s_scaled)
    j_basis = lam_pairs * inner_basis
    j_sym = np.einsum("pq,gqr,grt,gut,uw->gpw", f0, v, j_basis,
                      v.conj(), f0)
    t3 = setup.apply_symbol(phi_s, j_sym)

    return (t1 + t2 - t3) / eps


def solution_error(setup, phi, s, corrected=True, variant="with_smoothing"):
    """L2 errors of the homogenized (optionally corrected) solution."""
    u_eps = evolve_fine(setup, phi, s)
    u0 = evolve_homogenized(setup, phi, s)
    err_p = setup.box_norm(u_eps - u0)
    if not corrected:
        return {"principal": err_p}
    k = corrector_apply(setup, phi, s, variant)
    err_c = setup.box_norm(u_eps - u0 - setup.eps * k)
    return {"principal": err_p, "corrected": err_c}


# ---------------------------------------------------------------------------
# inhomogeneous problem


def theta1(eps, p):
    """Source-term error weight of the principal approximation."""
    if 1 < p < 2:
        return eps ** (2.0 - 2.0 / p)
    if p == 2:
        return eps * np.sqrt(1.0 + abs(np.log(eps)))
    return eps


def theta2(eps, p):
    return 1.0 + abs(np.log(eps)) if np.isinf(p) else 1.0


def _midpoint_nodes(s, n_steps):
    h = s / n_steps
    return h, (np.arange(n_steps) + 0.5) * h


def duhamel_solve(setup, phi, source, s, p_norm=np.inf, n_steps=48,
                  quad_tol=1e-3, variant="with_smoothing"):
    """Fine, homogenized, and corrected solutions of the driven problem.

    ``source`` maps a time in [0, s] to a (G^d, n) field (zero source allowed
    by passing None).  Composite midpoint quadrature in the time variable with
    a step-halving consistency check.
    """
    if source is None:
        u_eps = evolve_fine(setup, phi, s)
        u0 = evolve_homogenized(setup, phi, s)
        k = corrector_apply(setup, phi, s, variant)
        corrected = u0 + setup.eps * k
        return _pair_report(setup, phi, u_eps, u0, corrected, s, p_norm, 0.0)

    def integrals(n):
        h, nodes = _midpoint_nodes(s, n)
        acc_f = np.zeros((int(np.prod(setup.box_shape)), setup.n), dtype=complex)
        acc_h = np.zeros_like(acc_f)
        acc_corr = np.zeros_like(acc_f)
        eps = setup.eps
        for t in nodes:
            f_t = source(t)
            acc_f += h * evolve_fine(setup, f_t, s - t)
            acc_h += h * evolve_homogenized(setup, f_t, s - t)
            if p_norm > 2:
                acc_corr += h * _source_corrector_terms(setup, f_t, s - t, variant)
        return acc_f, acc_h, acc_corr

    i_f, i_h, i_corr = integrals(n_steps)
    i_f2, i_h2, i_corr2 = integrals(2 * n_steps)
    scale = max(setup.box_norm(i_f2), 1e-300)
    drift = setup.box_norm(i_f - i_f2) / scale
    if drift > quad_tol:
        raise QuadratureUnderResolved(
            f"halving the time step moved the integral by {drift:.2e}")

    u_eps = evolve_fine(setup, phi, s) + i_f2
    u0 = evolve_homogenized(setup, phi, s) + i_h2
    corrected = u0 + setup.eps * corrector_apply(setup, phi, s, variant)
    if p_norm > 2:
        corrected = corrected + setup.eps * i_corr2
    return _pair_report(setup, phi, u_eps, u0, corrected, s, p_norm, drift)


def _source_corrector_terms(setup, f_t, dt, variant):
    """Per-node source-side corrector: adjoint-multiplier term minus the
    closed-form double-integral kernel, divided by eps (caller scales)."""
    eps = setup.eps
    cell = setup.cell
    problem = cell.problem
    smooth = variant == "with_smoothing"
    lam_g = _tile(setup, "LambdaG", cell.LambdaG)
    lam_gt = _tile(setup, "LambdaTildeG", cell.LambdaTildeG)
    w, v = _effective_symbols(setup)
    f0 = cell.f0
    dt_scaled = dt / eps ** 2

    wadj = np.einsum("gqp,gq->gp", lam_g.conj(), f_t)
    wadj = setup.apply_symbol(
        wadj, np.swapaxes(_b_symbols_grid(setup).conj(), -1, -2))
    wadj = wadj + eps * np.einsum("gqp,gq->gp", lam_gt.conj(), f_t)
    if smooth:
        wadj = smoothing_apply(setup, wadj)
    vh = np.swapaxes(v.conj(), -1, -2)
    sym = np.einsum("pq,gqr,gr,grt,tu->gpu", f0, v, np.exp(-w * dt_scaled),
                    vh, f0)
    term_a = setup.apply_symbol(wadj, sym)

    f_s = smoothing_apply(setup, f_t) if smooth else f_t
    nsym = _ng_symbols(setup)
    inner = np.einsum("pq,gqr,rt->gpt", f0, nsym, f0)
    inner_basis = np.einsum("gqp,gqr,grt->gpt", v.conj(), inner, v)
    lam_pairs = linalg.confluent_weights_batch(w, dt_scaled)
    j_sym = np.einsum("pq,gqr,grt,gut,uw->gpw", f0, v,
                      lam_pairs * inner_basis, v.conj(), f0)
    term_b = setup.apply_symbol(f_s, j_sym)
    return (term_a - term_b) / eps


def _pair_report(setup, phi, u_eps, u0, corrected, s, p_norm, quad_drift):
    err_p = setup.box_norm(u_eps - u0)
    err_c = setup.box_norm(u_eps - corrected)
    eps = setup.eps
    if p_norm > 2:
        env_source = eps ** (2.0 - 2.0 / p_norm if np.isfinite(p_norm) else 2.0) \
            * theta2(eps, p_norm)
    else:
        env_source = theta1(eps, p_norm)
    return {
        "u_eps": u_eps, "u0": u0, "corrected": corrected,
        "err_principal": err_p, "err_corrected": err_c,
        "envelope_principal": eps / np.sqrt(s + eps ** 2),
        "envelope_corrected": eps ** 2 / (s + eps ** 2),
        "envelope_source": float(env_source),
        "quad_drift": float(quad_drift), "s": s,
    }


# ---------------------------------------------------------------------------
# convergence sweep


def convergence_sweep(problem, trunc, eps_list, s, mode="both",
                      box_size=8.0, n_probes=0, seed=0, constants=None,
                      cell_solution=None, ng_coeffs=None, threads=1):
    """Operator-level errors on matched boxes over a dyadic eps list.

    Per eps, the box holds box_size/(eps*period) cells per direction, and the
    exact error is the supremum of per-fiber remainder norms over the box's
    quasimomenta -- with and without the corrector unless ``mode`` picks one.
    With n_probes > 0 a randomized solution-level battery runs alongside and
    the report flags a >2x disagreement against the exact norm.
    """
    from .cell import solve_cell_problems, ng_coefficients

    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps_list) < 3:
        raise InsufficientDecades("need at least three eps points")
    if constants is None:
        constants = fb.estimate_constants(problem)
    cell_sol = cell_solution or solve_cell_problems(problem, trunc)
    ng = ng_coeffs or ng_coefficients(problem, cell_sol)
    period = float(problem.lattice.basis[0, 0])
    want_p = mode in ("both", "principal")
    want_c = mode in ("both", "corrected")
    rows = []
    for eps in eps_list:
        n_cells = max(3, int(round(box_size / (eps * period))))
        setup = EvolutionSetup(cell_sol, ng, constants, eps, n_cells, trunc)
        s_scaled = s / eps ** 2

        def one_fiber(idx):
            fib = setup.fiber(idx)
            flow = fb.FiberFlow(fib.matrix)
            k = setup.fiber_k[idx]
            rp = rc = 0.0
            if want_p:
                rp = fb.principal_remainder(cell_sol, trunc, k, eps, s_scaled,
                                            constants, fib, flow)
            if want_c:
                rc = fb.fiber_remainder(cell_sol, ng, trunc, k, eps, s_scaled,
                                        constants, fib, flow)["remainder_norm"]
            return rp, rc

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one_fiber, range(setup.n_fibers)))
        else:
            results = [one_fiber(i) for i in range(setup.n_fibers)]
        sup_p = max(r[0] for r in results)
        sup_c = max(r[1] for r in results)
        decay = np.exp(-0.5 * constants.cstar_check * s)
        row = {"eps": eps, "s": s, "n_cells": n_cells,
               "err_principal": sup_p, "err_corrected": sup_c,
               "envelope_principal": eps / np.sqrt(s + eps ** 2) * decay,
               "envelope_corrected": eps ** 2 / (s + eps ** 2) * decay}
        row["err_exact"] = sup_c if want_c else sup_p
        if n_probes:
            rng = np.random.default_rng(seed)
            worst = 0.0
            for _ in range(n_probes):
                phi = setup.random_band_limited(rng)
                errs = solution_error(setup, phi, s, corrected=want_c)
                key = "corrected" if want_c else "principal"
                worst = max(worst, errs[key])
            row["err_probe"] = worst
            row["probe_disagrees"] = bool(row["err_exact"]
                                          > 2.0 * worst + 1e-14)
        rows.append(row)
    return rows
