"""Flow integrators.

- stable flow: naive continuous-time limit (Euler substeps, count adapted
  to the current effective sharpness);
- central flow: time-averaged dynamics at the edge of stability, advanced
  by complementarity time-stepping: at each substep the oscillation
  covariance (in the tracked eigenbasis) solves an SDCP that keeps the
  effective sharpness pinned at the critical value 2;
- tangent-cone projection view of the central flow direction (GD only);
- squared-gradient-norm-penalty flow and its discrete counterpart as
  baselines.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .objective import sharpness
from .optimizers import (CriticalBasis, DivergenceError, OptimizerState,
                         critical_basis)
from .sdcp import SdcpProblem, beta_matrix_from_tensor, solve_sdcp

STABLE_FLOW_TERMINATION = 100.0
DEFAULT_EPS = 0.25
DEFAULT_TAU = 0.05
DEFAULT_TRACK_THRESH = 1.5


@dataclass
class FlowState:
    w: np.ndarray
    state: OptimizerState
    t: float = 0.0
    X: np.ndarray | None = None
    basis: CriticalBasis | None = None
    diagnostics: list = field(default_factory=list)
    terminated: bool = False
    flags: list = field(default_factory=list)


def init_flow_state(w, state):
    return FlowState(w=np.array(w, dtype=float),
                     state=OptimizerState(nu=np.array(state.nu, dtype=float),
                                          t=state.t))


def _stable_substep(m, w, nu, oracle, eps):
    """One shared Euler substep of the stable dynamics (also the k = 0
    branch of the central flow, so the two coincide bit-for-bit there)."""
    g = oracle.grad(w)
    state = OptimizerState(nu=nu)
    w_new = w - eps * (1.0 / m.P_diag(state, oracle.dim)) * g
    if m.name == "gd":
        nu_new = nu
    elif m.beta2 == 0.0:
        nu_new = m.grad_stat(g)
    else:
        nu_new = nu + eps * m.G_flow(nu, g)
    return w_new, nu_new


def _check_finite(w, where):
    if not np.all(np.isfinite(w)) or np.linalg.norm(w) > 1e12:
        raise DivergenceError(f"divergence in {where}")


def stable_flow_advance(m, fs, oracle, duration=1):
    """Euler-integrate dw/dt = -P(nu)^-1 grad L, dnu/dt = gamma [stat - nu]
    for `duration` units; substep count max(4, ceil(2 S_eff)) refreshed
    each unit.  Terminates (flag, not error) once S_eff exceeds 100."""
    if fs.terminated:
        return fs
    for _ in range(int(duration)):
        basis = critical_basis(m, fs.w, fs.state, oracle,
                               warm=fs.basis.U_tilde if fs.basis is not None else None)
        s_eff = float(basis.D[0])
        if s_eff >= STABLE_FLOW_TERMINATION:
            fs.terminated = True
            fs.flags.append(f"stable flow terminated at t={fs.t}: S_eff={s_eff:.3f}")
            return fs
        nsub = max(4, math.ceil(2.0 * s_eff))
        eps = 1.0 / nsub
        for _ in range(nsub):
            fs.w, fs.state.nu = _stable_substep(m, fs.w, fs.state.nu, oracle, eps)
            _check_finite(fs.w, "stable flow")
        fs.basis = basis
        fs.t += 1.0
    return fs


def compute_nabla_HU(oracle, w, U):
    """Third-derivative slabs: slab[i, j] = grad_w [u_i^T H(w) u_j].

    Only the upper triangle is evaluated; the rest is mirrored."""
    k = U.shape[1]
    slabs = np.empty((k, k, len(w)))
    for i in range(k):
        for j in range(i, k):
            s = oracle.third_bilinear(w, U[:, i], U[:, j])
            slabs[i, j] = s
            if j != i:
                slabs[j, i] = s
    return slabs


def assemble_alpha_beta(m, w, state, basis, oracle, slabs=None):
    """alpha_U and the beta operator tensor in the tracked P-orthonormal
    basis:
        alpha = nablaH_U[P^-1 g] + 2 dP_U[G]
        beta  = 1/2 nablaH_U P^-1 nablaH_U^T + 4 dP_U (x) d2G_PU
    For beta2 = 0 the EMA adapts instantly, so only the gamma-dominant
    terms survive (the SDCP is invariant to the common gamma factor)."""
    k = basis.U.shape[1]
    U = basis.U
    g = oracle.grad(w)
    Pd = m.P_diag(state, oracle.dim)
    if slabs is None:
        slabs = compute_nabla_HU(oracle, w, U)
    pinv_g = g / Pd
    alpha_H = np.einsum("ijd,d->ij", slabs, pinv_g)
    beta_H = 0.5 * np.einsum("ijd,kld->ijkl", slabs, slabs / Pd)
    instant = (m.name != "gd" and m.beta2 == 0.0)
    dPU = m.grad_P_U(state, U)
    if instant:
        Gf = m.grad_stat(g) - state.nu
        G2 = m.G2_PU(state, U, with_gamma=False)
        alpha = 2.0 * np.einsum("qij,q->ij", dPU, Gf)
        beta = 4.0 * np.einsum("qij,qkl->ijkl", dPU, G2)
    else:
        alpha = alpha_H.copy()
        beta = beta_H.copy()
        if dPU.shape[0] > 0:
            Gf = m.G_flow(state.nu, g)
            G2 = m.G2_PU(state, U)
            alpha += 2.0 * np.einsum("qij,q->ij", dPU, Gf)
            beta += 4.0 * np.einsum("qij,qkl->ijkl", dPU, G2)
    alpha = 0.5 * (alpha + alpha.T)
    return alpha, beta


def _apply_tensor(T, X):
    return np.einsum("ijkl,kl->ij", T, X)


def _contract_slabs(slabs, X):
    return np.einsum("ijd,ij->d", slabs, X)


def central_flow_advance(m, fs, oracle, duration=1, eps=DEFAULT_EPS,
                         tau=DEFAULT_TAU, track_thresh=DEFAULT_TRACK_THRESH,
                         ablate_curvature=False, pinned_nu=None):
    """Advance the central flow by `duration` units with substep size eps.

    Per substep: refresh the tracked basis (effective-Hessian eigenvalues
    above 2 - tau), solve X = sdcp(2I - D + eps*alpha_U, eps*beta_U), then
    Euler-update
        w  <- w  - eps * P^-1 [grad L + 1/2 nablaH_U^T[X]]
        nu <- nu + eps * [G + 2 d2G_PU[X]]
    With no unstable eigenvalues the substep reduces to the stable flow.
    ``ablate_curvature`` zeroes the third-derivative slabs (disables the
    implicit curvature penalty); ``pinned_nu(w)`` freezes the EMA to a
    provided function of the weights (used by the stationary flow).
    """
    nsub = max(1, round(1.0 / eps))
    for _ in range(int(duration)):
        for _ in range(nsub):
            if pinned_nu is not None:
                fs.state.nu = np.asarray(pinned_nu(fs.w), dtype=float)
            basis = critical_basis(m, fs.w, fs.state, oracle, tau=tau,
                                   track_thresh=track_thresh,
                                   warm=fs.basis.U_tilde if fs.basis is not None else None)
            loss_pre = oracle.loss(fs.w)
            g = oracle.grad(fs.w)
            rec = {"t": fs.t, "k": basis.k_unstable,
                   "D": basis.D.tolist(), "loss_pre": loss_pre,
                   "gradnorm_sq": float(g @ g), "eps": eps}
            k = basis.k_unstable
            if k == 0:
                fs.w, fs.state.nu = _stable_substep(m, fs.w, fs.state.nu,
                                                    oracle, eps)
                fs.X = None
                rec.update({"trX": 0.0, "X": None})
            else:
                U = basis.U
                slabs = compute_nabla_HU(oracle, fs.w, U)
                if ablate_curvature:
                    slabs = np.zeros_like(slabs)
                alpha_U, beta_T = assemble_alpha_beta(m, fs.w, fs.state,
                                                      basis, oracle,
                                                      slabs=slabs)
                if not np.any(beta_T):
                    # fully ablated operator (GD with slabs zeroed): the
                    # constraint force vanishes, leaving the stable step
                    fs.w, fs.state.nu = _stable_substep(m, fs.w, fs.state.nu,
                                                        oracle, eps)
                    fs.X = None
                    rec.update({"trX": 0.0, "X": None})
                    _check_finite(fs.w, "central flow")
                    rec["loss_post"] = oracle.loss(fs.w)
                    fs.basis = basis
                    fs.diagnostics.append(rec)
                    fs.t += eps
                    continue
                alpha_full = (2.0 * np.eye(k) - np.diag(basis.D[:k])
                              + eps * alpha_U)
                prob = SdcpProblem.build(alpha_full,
                                         eps * beta_matrix_from_tensor(beta_T))
                x0 = fs.X if (fs.X is not None and fs.X.shape[0] == k) else None
                sol = solve_sdcp(prob, x0=x0)
                if not sol.converged:
                    fs.flags.append(f"sdcp not converged at t={fs.t}")
                X = sol.X
                Pd = m.P_diag(fs.state, oracle.dim)
                drift = g + 0.5 * _contract_slabs(slabs, X)
                fs.w = fs.w - eps * drift / Pd
                if pinned_nu is None and m.name != "gd":
                    if m.beta2 == 0.0:
                        G2h = m.G2_PU(fs.state, U, with_gamma=False)
                        fs.state.nu = (m.grad_stat(g)
                                       + 2.0 * np.einsum("qij,ij->q", G2h, X))
                    else:
                        G2 = m.G2_PU(fs.state, U)
                        fs.state.nu = (fs.state.nu
                                       + eps * (m.G_flow(fs.state.nu, g)
                                                + 2.0 * np.einsum("qij,ij->q", G2, X)))
                fs.X = X
                rec.update({"trX": float(np.trace(X)), "X": X.tolist(),
                            "sdcp_converged": sol.converged,
                            "beta_regularized": prob.regularized})
            _check_finite(fs.w, "central flow")
            rec["loss_post"] = oracle.loss(fs.w)
            fs.basis = basis
            fs.diagnostics.append(rec)
            fs.t += eps
    return fs


def project_tangent_cone(v, w, oracle, basis, eta):
    """Projection of v onto the tangent cone of the sharpness constraint
    (GD geometry: P = I/eta, so the basis columns rescale to orthonormal).

    Returns v - 1/2 nablaH_U^T[X] with X from the projection SDCP; the
    result satisfies Moreau orthogonality <proj(v), v - proj(v)> = 0."""
    if basis is None or basis.k_unstable == 0:
        return np.array(v, dtype=float)
    U_orth = basis.U / np.sqrt(eta)
    slabs = compute_nabla_HU(oracle, w, U_orth)
    alpha = -np.einsum("ijd,d->ij", slabs, v)
    beta = 0.5 * np.einsum("ijd,kld->ijkl", slabs, slabs)
    prob = SdcpProblem.build(alpha, beta_matrix_from_tensor(beta))
    sol = solve_sdcp(prob)
    return v - 0.5 * _contract_slabs(slabs, sol.X)


def igr_flow_advance(w, eta, oracle, duration=1):
    """Euler integration of the squared-gradient-norm-penalty flow
    dw/dt = -eta [grad L + (eta/2) H grad L], with the substep count set
    to a quarter of the local stability limit."""
    w = np.array(w, dtype=float)
    for _ in range(int(duration)):
        s = sharpness(oracle, w)
        nsub = max(1, math.ceil(2.0 * eta * s + eta * eta * s * s))
        eps = 1.0 / nsub
        for _ in range(nsub):
            g = oracle.grad(w)
            w = w - eta * eps * (g + 0.5 * eta * oracle.hvp(w, g))
            _check_finite(w, "gradient-penalty flow")
    return w


def igr_step_discrete(w, eta, tau_reg, oracle):
    """One discrete GD step on the gradient-norm-penalized objective
    L + (tau/4) ||grad L||^2, i.e. w - eta [grad L + (tau/2) H grad L]."""
    g = oracle.grad(w)
    w_new = w - eta * (g + 0.5 * tau_reg * oracle.hvp(w, g))
    _check_finite(w_new, "penalized discrete step")
    return w_new
