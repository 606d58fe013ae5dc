"""Convergence-bound constants and the per-client coefficient optimization.

Everything here is closed-form arithmetic on the constants that drive the
per-round contraction/bias recursions of the federated (FL) and personalized
(PL) models, plus the one-dimensional convex search that picks each client's
PL learning rate and coupling weight:

* ``theta_l``           aggregation error term from corrupted uploads
* ``eps_f``             FL per-round contraction factor (quadratic in eta_F)
* ``gamma_constants``   additive bias constants of the FL recursion
* ``eps_p_of``          PL per-round contraction factor
* ``lambda_of_eta``     coupling weight that keeps eps_p at its target
* ``feasible_sets``     eta_P intervals on which that weight stays in (0, 2)
* ``phi_terms``         PL per-round bias Phi(eta_P, lambda)
* ``minimize_phi``      golden-section minimization of Phi over the intervals

Free constants phi1/phi2/varphi1/varphi2 come from Cauchy-Schwarz splits and
may be any positive values; defaults of 0.01 work for moderately
well-conditioned losses (construction validates this via eps_F feasibility).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConstraintViolation, EstimationError

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class BoundConstants:
    """Loss-landscape and mechanism constants used by every bound formula."""

    mu: float               # strong-convexity constant
    lsmooth: float          # smoothness constant
    g0: float               # gradient-norm bound
    m_dist: float           # bound on distance between local and global optima
    clip_c: float
    sigma_dp: float
    model_size: int
    e_l_max: float          # max quantization error, uploads
    e_g_max: float          # max quantization error, broadcast
    beta_l: float           # 1 / (2^R - 1)
    beta_g: float
    phi1: float = 0.01
    phi2: float = 0.01
    varphi1: float = 0.01
    varphi2: float = 0.01

    def __post_init__(self):
        if not 0 < self.mu <= self.lsmooth:
            raise ConfigError("need 0 < mu <= L")
        if not self.mu < 2:
            raise ConfigError("the coefficient design requires mu < 2")
        for name in ("phi1", "phi2", "varphi1", "varphi2"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"free constant {name} must be positive")
        eta = optimal_eta_f(self)
        value = eps_f(eta, self, check=False)
        if not 0.0 < value < 1.0:
            raise ConfigError(
                f"eps_F({eta:.4g}) = {value:.6g} is outside (0, 1); "
                "decrease the free constants or re-estimate mu/L")


@dataclass(frozen=True)
class RoundCoefficients:
    """Per-round learning rates and coupling weights handed to the trainer."""

    eta_f: float
    eta_p: np.ndarray
    lam: np.ndarray
    eps_p: float


@dataclass(frozen=True)
class GammaConstants:
    gamma0: float
    gamma1: float
    gamma2: float
    gamma3: float
    h1: float


def theta_l(rhos, consts: BoundConstants) -> float:
    """Upload-corruption term of the aggregation bound; 0 when nobody uploads."""
    rhos = np.asarray(rhos, dtype=float)
    if rhos.size == 0:
        return 0.0
    c, s, w = consts.clip_c, consts.sigma_dp, consts.model_size
    coef = 2 * c * c + (2 - consts.beta_l ** 2) * w * (c + 3 * s) ** 2 - w * s * s
    return coef * float(rhos.sum()) / rhos.size


def eps_f(eta_f: float, consts: BoundConstants, check: bool = True) -> float:
    """FL contraction factor at local learning rate ``eta_f``."""
    value = (1 + consts.varphi1) * (
        (1 + consts.phi2)
        + (1 + consts.phi1) * consts.lsmooth ** 2 * eta_f ** 2
        - consts.mu * eta_f
    )
    if check and not 0.0 < value < 1.0:
        raise ConstraintViolation(f"eps_F = {value:.6g} outside (0, 1) at eta_F = {eta_f:.4g}")
    return value


def optimal_eta_f(consts: BoundConstants) -> float:
    """Vertex of the eps_F parabola: mu / (2 (1+phi1) L^2)."""
    eta = consts.mu / (2 * (1 + consts.phi1) * consts.lsmooth ** 2)
    if not 0.0 < eta < 1.0:
        raise ConfigError(f"optimal eta_F = {eta:.4g} falls outside (0, 1)")
    return eta


def gamma_constants(consts: BoundConstants, theta_l_min: float, rho_down: float) -> GammaConstants:
    """Additive bias constants of the FL recursion, folded with theta_l_min."""
    c, s, w = consts.clip_c, consts.sigma_dp, consts.model_size
    p1, p2 = consts.phi1, consts.phi2
    v1, v2 = consts.varphi1, consts.varphi2
    noise_sq = s * s + consts.e_l_max ** 2
    gamma0 = (1 + 1 / v1) * (
        2 * (1 + 1 / v2) * c * c
        + 2 * w * (1 + v2) * noise_sq
        + 2 * w * (c * c - consts.e_l_max ** 2)
    )
    gamma1 = w * (1 + v1) * (1 + 1 / p1 + 1 / p2) * noise_sq \
        + 2 * w * (1 + 1 / v1) * consts.e_g_max ** 2
    gamma2 = 2 * (1 + 1 / v1) * (1 + v2) * theta_l_min + gamma0
    gamma3 = (1 + v1) * (1 + 1 / p1 + 1 / p2) * theta_l_min + gamma1
    h1 = 2 * (1 + 1 / v1) * (1 + v2) * rho_down + (1 + v1) * (1 + 1 / p1 + 1 / p2)
    return GammaConstants(gamma0, gamma1, gamma2, gamma3, h1)


def lambda_of_eta(eta_p: float, eps_p: float, mu: float) -> float:
    """Coupling weight that makes the PL contraction factor equal eps_p."""
    if eta_p == 0:
        raise ValueError("eta_p must be nonzero")
    return ((1 - eps_p) / eta_p + eta_p - mu) / (1 - mu / 2)


def eps_p_of(eta_p: float, lam: float, mu: float) -> float:
    """PL contraction factor for a given learning rate and coupling weight."""
    return 1 - eta_p * ((1 - lam / 2) * mu + lam) + eta_p ** 2


def feasible_sets(eps_p: float, mu: float):
    """Intervals of eta_P on which lambda_of_eta stays strictly inside (0, 2).

    Returns (omega0, omega1) where each is a (lo, hi) pair and omega1 may be
    None. Requires eps_p in [1 - mu^2/4, 1) so the roots below are real.
    """
    if not 0 < mu < 2:
        raise ConfigError("mu must lie in (0, 2)")
    if not (1 - mu * mu / 4) <= eps_p < 1:
        raise ConfigError(f"eps_p = {eps_p:.6g} outside [1 - mu^2/4, 1) = "
                          f"[{1 - mu * mu / 4:.6g}, 1)")
    eta1 = 1 - math.sqrt(eps_p)
    disc = math.sqrt(max(0.0, mu * mu - 4 * (1 - eps_p)))
    eta2 = (mu - disc) / 2
    eta3 = (mu + disc) / 2
    omega0 = (eta1, eta2)
    omega1 = (eta3, 1.0) if eta3 < 1.0 else None
    return omega0, omega1


def phi_terms(eta_p: float, lam: float, consts: BoundConstants, gammas: GammaConstants,
              rho_down: float, sum_eps_f: float, n_selected: int):
    """(G, Psi, Phi) for one client at a given (eta_P, lambda).

    Phi is the per-round additive bias of the PL recursion: a gradient-drift
    term plus the channel/privacy bias carried over from the FL model.
    """
    if lam == 0:
        raise ValueError("lambda must be nonzero")
    mu, g0, m = consts.mu, consts.g0, consts.m_dist
    g_n = ((1 - lam / 2) * g0 + lam * (g0 / mu + m)) ** 2
    psi = (eta_p ** 2 + 1) * lam ** 2 + eta_p ** 3 / lam
    if n_selected > 0:
        fl_term = (g0 ** 2 + m * mu) ** 2 / (n_selected * mu ** 2) * sum_eps_f
    else:
        fl_term = 0.0
    phi = (1 + lam ** 3) * eta_p ** 2 * g_n \
        + psi * (gammas.gamma2 * rho_down + gammas.gamma3 + fl_term)
    return g_n, psi, phi


def _golden_min(f, lo: float, hi: float, tol: float = 1e-9):
    """Golden-section minimum of a unimodal f on [lo, hi]; returns (x, f(x))."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    best_x, best_f = (c, fc) if fc <= fd else (d, fd)
    while (b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
            if fc < best_f:
                best_x, best_f = c, fc
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
            if fd < best_f:
                best_x, best_f = d, fd
    return best_x, best_f


def minimize_phi(consts: BoundConstants, gammas: GammaConstants, rho_down: float,
                 sum_eps_f: float, n_selected: int, eps_p: float, tol: float = 1e-9):
    """Minimize Phi(eta_P, lambda(eta_P)) over the feasible intervals.

    Phi is convex on each interval, so a golden-section search per interval
    (shaved at the endpoints, where lambda hits 0 or 2) finds the optimum.
    Returns (eta_p_star, lambda_star, phi_star); the pair satisfies the
    contraction-consistency constraint by construction of lambda_of_eta.
    """
    omega0, omega1 = feasible_sets(eps_p, consts.mu)

    def objective(eta):
        lam = lambda_of_eta(eta, eps_p, consts.mu)
        return phi_terms(eta, lam, consts, gammas, rho_down, sum_eps_f, n_selected)[2]

    best = None
    for region in (omega0, omega1):
        if region is None:
            continue
        lo, hi = region
        margin = max(1e-12, 1e-9 * (hi - lo))
        if hi - lo <= 2 * margin:
            continue
        x, fx = _golden_min(objective, lo + margin, hi - margin, tol)
        if best is None or fx < best[1]:
            best = (x, fx)
    if best is None:
        raise ConfigError("no nonempty feasible interval for eta_P")
    eta_star, phi_star = best
    return eta_star, lambda_of_eta(eta_star, eps_p, consts.mu), phi_star


def fl_bound_step(prev_bound: float, eps_f_mean: float, gamma_next: float) -> float:
    """One step of the FL bound recursion."""
    return eps_f_mean * prev_bound + gamma_next


def pl_bound_overall(initial_dist_sq: float, eps_p_max: float, phi_max: float,
                     t_rounds: int) -> float:
    """Closed-form bound after t rounds: decay of the start plus geometric bias."""
    if initial_dist_sq < 0:
        raise ValueError("initial distance must be nonnegative")
    if not eps_p_max < 1:
        raise ConstraintViolation("eps_p_max >= 1: the recursion does not contract")
    if t_rounds == 0:
        return initial_dist_sq
    decay = eps_p_max ** t_rounds
    geometric = (decay - 1.0) / (eps_p_max - 1.0)
    return decay * initial_dist_sq + geometric * phi_max


def empirical_mu_l(model, batch_x, batch_y, rng: np.random.Generator,
                   n_pairs: int = 200, scale: float = 1.0):
    """Estimate (mu, L) as min/max of ||grad(w) - grad(w')|| / ||w - w'||.

    Pairs are drawn around the origin at the given scale; coincident pairs
    are skipped.
    """
    if n_pairs < 2:
        raise ValueError("need at least 2 pairs")
    ratios = []
    for _ in range(n_pairs):
        w = rng.normal(0.0, scale, model.n_params)
        w2 = rng.normal(0.0, scale, model.n_params)
        dw = np.linalg.norm(w - w2)
        if dw < 1e-12 * scale:
            continue
        dg = np.linalg.norm(model.grad(w, batch_x, batch_y) - model.grad(w2, batch_x, batch_y))
        ratios.append(dg / dw)
    if not ratios:
        raise EstimationError("all sampled parameter pairs were coincident")
    return float(min(ratios)), float(max(ratios))


def bound_constants_from(privacy, model_size: int, mu: float, lsmooth: float,
                         g0: float, m_dist: float, local_q, global_q,
                         phi1: float = 0.01, phi2: float = 0.01,
                         varphi1: float = 0.01, varphi2: float = 0.01) -> BoundConstants:
    """Assemble BoundConstants from a resolved privacy spec and the quantizers."""
    beta = 1.0 / (2 ** privacy.r_bits - 1)
    return BoundConstants(
        mu=mu, lsmooth=lsmooth, g0=g0, m_dist=m_dist,
        clip_c=privacy.clip_c, sigma_dp=privacy.resolved_sigma,
        model_size=model_size,
        e_l_max=local_q.e_max, e_g_max=global_q.e_max,
        beta_l=beta, beta_g=beta,
        phi1=phi1, phi2=phi2, varphi1=varphi1, varphi2=varphi2,
    )
