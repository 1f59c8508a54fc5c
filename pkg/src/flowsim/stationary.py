"""Stationary EMA / preconditioner for the diagonal adaptive method.

Fixed-point iteration on a low-rank factor D (Sigma_bar = D D^T):

    nu <- g**2 + rowsum((H D)**2)
    D  <- (eta/2) diag(nu**-1/2) (H D)

whose fixed points satisfy the stationarity relation
nu = g**2 + (4/eta^2) nu * diag(Sigma_bar) exactly by construction, and —
when the resulting preconditioner is stable — the KKT system of the
convex program min tr P + <g, P^-1 g> over diagonal P with 2P >= H.
The Hessian is only touched through matvecs.
"""

from dataclasses import dataclass, field

import numpy as np

from .flows import central_flow_advance
from .linalg import lobpcg_topk, sym_eig_dense

DEFAULT_NSTEPS = 5000
DEFAULT_TOL_NU = 1e-10
STABILITY_TOL = 1e-6
MSG_MORE_STEPS = "more steps needed"
MSG_HIGHER_R = "higher r needed"


@dataclass
class StationaryResult:
    nu_bar: np.ndarray
    D_factor: np.ndarray  # d x r; Sigma_bar = D_factor @ D_factor.T
    P_bar_diag: np.ndarray
    eta: float
    converged: bool
    stability_ok: bool
    eff_sharpness: float
    niter: int
    residuals: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)


def _hvp_block(oracle, w, D):
    HD = np.empty_like(D)
    for j in range(D.shape[1]):
        HD[:, j] = oracle.hvp(w, D[:, j])
    return HD


def stationary_nu(oracle, w, eta, r=2, nsteps=DEFAULT_NSTEPS,
                  tol_nu=DEFAULT_TOL_NU, seed=0, D0=None, zero_grad=False):
    """Run the fixed-point iteration at w; never raises on failure, returns
    a flagged result instead ("more steps needed" / "higher r needed")."""
    if r < 1:
        raise ValueError("rank r must be >= 1")
    w = np.asarray(w, dtype=float)
    d = oracle.dim
    g = np.zeros(d) if zero_grad else oracle.grad(w)
    gsq = g * g
    rng = np.random.default_rng(seed)
    D = np.array(D0, dtype=float) if D0 is not None else rng.standard_normal((d, r))
    nu = np.full(d, np.inf)
    converged = False
    it = 0
    for it in range(1, int(nsteps) + 1):
        HD = _hvp_block(oracle, w, D)
        nu_new = gsq + np.sum(HD * HD, axis=1)
        # coordinates the iteration has zeroed out stay out of the factor
        safe = np.sqrt(np.maximum(nu_new, 1e-300))
        D = (eta / 2.0) * (HD / safe[:, None])
        D[nu_new <= 0.0] = 0.0
        change = np.linalg.norm(nu_new - nu) / max(np.linalg.norm(nu_new), 1e-300)
        nu = nu_new
        if change < tol_nu:
            converged = True
            break
    p_bar = np.sqrt(nu) / eta
    pinv_sqrt = 1.0 / np.sqrt(np.maximum(p_bar, 1e-300))
    pairs = lobpcg_topk(lambda v: pinv_sqrt * oracle.hvp(w, pinv_sqrt * v),
                        d, min(2, d), tol=1e-11, seed=seed)
    s_eff = float(pairs.values[0])
    stability_ok = s_eff <= 2.0 + STABILITY_TOL
    messages = []
    if not converged:
        messages.append(MSG_MORE_STEPS)
    if not stability_ok:
        messages.append(MSG_HIGHER_R)
    result = StationaryResult(nu_bar=nu, D_factor=D, P_bar_diag=p_bar, eta=eta,
                              converged=converged, stability_ok=stability_ok,
                              eff_sharpness=s_eff, niter=it, messages=messages)
    result.residuals = verify_stationary_kkt(oracle, w, eta, result,
                                             zero_grad=zero_grad)
    return result


def verify_stationary_kkt(oracle, w, eta, result, zero_grad=False):
    """KKT residuals of the convex program certified by the fixed point.

    With Z = (2/eta^2) Sigma_bar and p the preconditioner diagonal:
      stationarity     max_i |1 - g_i^2/(eta^2 p_i^2) - 2 Z_ii|
      primal PSD       |min(0, lambda_min(2 diag(p) - H))|
      dual PSD         |min(0, lambda_min(Z))|
      complementarity  |<2 diag(p) - H, Z>|
    """
    w = np.asarray(w, dtype=float)
    d = oracle.dim
    g = np.zeros(d) if zero_grad else oracle.grad(w)
    p = result.P_bar_diag
    D = result.D_factor
    diag_sigma = np.sum(D * D, axis=1)
    Z_diag = (2.0 / eta ** 2) * diag_sigma
    p_safe = np.maximum(p, 1e-300)
    stat = np.abs(1.0 - (g / (eta * p_safe)) ** 2 - 2.0 * Z_diag).max()
    # lambda_min(2 diag(p) - H) = -lambda_max(H - 2 diag(p)), matvec only
    pairs = lobpcg_topk(lambda v: oracle.hvp(w, v) - 2.0 * p * v,
                        d, 1, tol=1e-11)
    lam_min_primal = -float(pairs.values[0])
    # Z = (2/eta^2) D D^T: eigenvalues from the r x r Gram, zero-padded
    gram_ev = sym_eig_dense(D.T @ D).values
    lam_min_Z = (2.0 / eta ** 2) * float(gram_ev.min() if D.shape[1] >= d
                                         else min(gram_ev.min(), 0.0))
    HD = _hvp_block(oracle, w, D)
    comp = (2.0 / eta ** 2) * abs(2.0 * float(p @ diag_sigma)
                                  - float(np.sum(D * HD)))
    return {"stationarity": float(stat),
            "psd_primal": abs(min(0.0, lam_min_primal)),
            "psd_dual": abs(min(0.0, lam_min_Z)),
            "complementarity": comp}


def min_trace_preconditioner(oracle, w, eta=1.0, r=2, nsteps=DEFAULT_NSTEPS,
                             tol_nu=DEFAULT_TOL_NU, seed=0):
    """Minimum-trace diagonal stable preconditioner: the same fixed point
    with the gradient zeroed.  P_hat is eta-invariant (nu_bar scales as
    eta^2); the dual Z_hat = (2/eta^2) Sigma_bar has Z_ii = 1/2 on active
    coordinates."""
    return stationary_nu(oracle, w, eta, r=r, nsteps=nsteps, tol_nu=tol_nu,
                         seed=seed, zero_grad=True)


def stationary_flow_advance(fs, oracle, m, duration=1, r=None, eps=0.25,
                            nsteps=DEFAULT_NSTEPS, seed=0,
                            ablate_curvature=False):
    """Central flow over w alone, with nu pinned to nu_bar(w) recomputed at
    each substep (warm-started on the previous factor).  If the solve at
    some w fails, the last good nu_bar is kept and the state is flagged."""
    if m.name != "rmsprop":
        raise ValueError("stationary flow is defined for the diagonal method")
    cache = {"D0": None, "nu": np.array(fs.state.nu, dtype=float)}
    rank = r if r is not None else 2

    def pinned(w):
        res = stationary_nu(oracle, w, m.eta, r=rank, nsteps=nsteps,
                            seed=seed, D0=cache["D0"])
        if res.converged and res.stability_ok:
            cache["D0"] = res.D_factor
            cache["nu"] = res.nu_bar
        else:
            fs.flags.append(f"stationary solve failed at t={fs.t}: "
                            + ", ".join(res.messages))
        return cache["nu"]

    return central_flow_advance(m, fs, oracle, duration=duration, eps=eps,
                                ablate_curvature=ablate_curvature,
                                pinned_nu=pinned)
