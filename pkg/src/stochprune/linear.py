"""Exact analytics for stochastically pruned linear regression.

A linear model with weights ``w`` is pruned by an independent Bernoulli mask
with keep probabilities ``lam``.  Under squared error the expected (Gibbs)
risk only depends on the second moments of the masked weights, so every
quantity here is closed form and can be checked against brute-force
enumeration over the 2^D masks.

Notation: ``Sigma`` is the empirical feature covariance (1/M) Phi^T Phi and
``A`` the feature alignment (1/M) Phi^T Y of a data split.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .bounds import kl_bernoulli

EIG_FLOOR = 1e-12
SMALL_ETA = 0.1
LARGE_ETA = 3.0


# -- instances ----------------------------------------------------------------

def centering_map(X):
    """Identity feature map that subtracts the column means of ``X``."""
    center = np.asarray(X, dtype=np.float64).mean(axis=0)

    def psi(Z):
        return np.asarray(Z, dtype=np.float64) - center

    psi.center = center
    return psi


@dataclass
class LinearInstance:
    X_P: np.ndarray
    Y_P: np.ndarray
    X_Pbar: np.ndarray
    Y_Pbar: np.ndarray
    feature_map: Optional[Callable] = None
    w_star: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X_P = np.atleast_2d(np.asarray(self.X_P, dtype=np.float64))
        self.Y_P = np.asarray(self.Y_P, dtype=np.float64).ravel()
        self.X_Pbar = np.asarray(self.X_Pbar, dtype=np.float64).reshape(-1, self.X_P.shape[1])
        self.Y_Pbar = np.asarray(self.Y_Pbar, dtype=np.float64).ravel()
        if self.X_P.shape[0] != self.Y_P.shape[0] or self.X_Pbar.shape[0] != self.Y_Pbar.shape[0]:
            raise ValueError("inputs and labels disagree in row count")
        if self.feature_map is None:
            self.feature_map = centering_map(self.X_P)
        self.Phi_P = self.feature_map(self.X_P)
        self.Phi_Pbar = self.feature_map(self.X_Pbar)
        M = self.M
        self.Sigma_P = self.Phi_P.T @ self.Phi_P / M
        self.Sigma_P = 0.5 * (self.Sigma_P + self.Sigma_P.T)
        self.A_P = self.Phi_P.T @ self.Y_P / M
        nb = self.X_Pbar.shape[0]
        if nb:
            self.Sigma_Pbar = self.Phi_Pbar.T @ self.Phi_Pbar / nb
            self.A_Pbar = self.Phi_Pbar.T @ self.Y_Pbar / nb
        else:
            self.Sigma_Pbar = np.zeros_like(self.Sigma_P)
            self.A_Pbar = np.zeros_like(self.A_P)

    @property
    def M(self):
        return self.X_P.shape[0]

    @property
    def N(self):
        return self.X_P.shape[0] + self.X_Pbar.shape[0]

    @property
    def d(self):
        return self.X_P.shape[1]

    @property
    def D(self):
        return self.Phi_P.shape[1]

    def y_sq(self):
        return float(self.Y_P @ self.Y_P) / self.M

    def posterior_view(self):
        """The held-out split as the prior split of a new instance (same feature map)."""
        return LinearInstance(self.X_Pbar, self.Y_Pbar, self.X_Pbar[:0], self.Y_Pbar[:0],
                              feature_map=self.feature_map)


def from_moments(Sigma, A, y_sq=1.0):
    """Instance-like object built directly from (Sigma, A, ||Y||^2/M)."""
    return _Moments(np.asarray(Sigma, dtype=np.float64), np.asarray(A, dtype=np.float64), float(y_sq))


@dataclass
class _Moments:
    Sigma_P: np.ndarray
    A_P: np.ndarray
    _y_sq: float

    def y_sq(self):
        return self._y_sq

    @property
    def D(self):
        return self.A_P.shape[0]


def save_instance(path, inst):
    """Comma-separated text; header ``M,N-M,d,D`` then rows ``x_1..x_d,y``."""
    rows = np.vstack([np.column_stack([inst.X_P, inst.Y_P]),
                      np.column_stack([inst.X_Pbar, inst.Y_Pbar])])
    header = f"{inst.M},{inst.N - inst.M},{inst.d},{inst.D}"
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")


def load_instance(path, feature_map=None):
    with open(path) as fh:
        M, Mbar, d, _ = (int(v) for v in fh.readline().split(","))
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.shape != (M + Mbar, d + 1):
        raise ValueError(f"expected {(M + Mbar, d + 1)} values, found {rows.shape}")
    return LinearInstance(rows[:M, :d], rows[:M, d], rows[M:, :d], rows[M:, d], feature_map)


# -- Gibbs risk and gradients -------------------------------------------------

@dataclass
class GibbsLinearState:
    w: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.lam = np.asarray(self.lam, dtype=np.float64)

    @property
    def mean_weights(self):
        return self.lam * self.w

    @property
    def Gamma(self):
        """Second moment E[W W^T] of the masked weights."""
        wb = self.mean_weights
        G = np.outer(wb, wb)
        np.fill_diagonal(G, self.lam * self.w ** 2)
        return G


def gibbs_risk_closed_form(inst, state):
    wb = state.mean_weights
    S = inst.Sigma_P
    # Tr(Gamma Sigma) without forming Gamma
    second = wb @ S @ wb + np.sum((state.lam - state.lam ** 2) * state.w ** 2 * np.diag(S))
    return 0.5 * (second - 2.0 * wb @ inst.A_P + inst.y_sq())


def gibbs_risk_enumerate(inst, state):
    """Brute-force expectation over all masks (feasible for D up to ~20)."""
    if state.w.shape[0] > 20:
        raise ValueError("enumeration is limited to D <= 20")
    return kernels.enumerate_linear_gibbs(inst.Phi_P, inst.Y_P, state.w, state.lam)


def mean_predictor_risk(inst, wbar):
    wbar = np.asarray(wbar, dtype=np.float64)
    return 0.5 * (wbar @ inst.Sigma_P @ wbar - 2.0 * wbar @ inst.A_P + inst.y_sq())


def mean_predictor_grad(inst, wbar):
    return inst.Sigma_P @ np.asarray(wbar, dtype=np.float64) - inst.A_P


def gibbs_risk_grad_lambda(inst, state):
    w, lam, S = state.w, state.lam, inst.Sigma_P
    diag = np.diag(S)
    cross = w * (S @ (lam * w)) - lam * w ** 2 * diag
    return cross + 0.5 * w ** 2 * diag - w * inst.A_P


def gibbs_risk_grad_weights(inst, state):
    """Exact gradient of the closed-form Gibbs risk w.r.t. ``w``."""
    w, lam, S = state.w, state.lam, inst.Sigma_P
    return lam * mean_predictor_grad(inst, lam * w) + lam * (1.0 - lam) * w * np.diag(S)


def weight_grad_stated(inst, state):
    """Diagnostic decomposition lam * dL(Wbar)/dWbar + lam * w * Sigma_ii.

    Differs from ``gibbs_risk_grad_weights`` by ``lam^2 w Sigma_ii``.
    """
    w, lam = state.w, state.lam
    return lam * mean_predictor_grad(inst, lam * w) + lam * w * np.diag(inst.Sigma_P)


def stated_regularizer(inst, w):
    """r0_i = w_i^2 Sigma_ii / 2."""
    return 0.5 * np.asarray(w) ** 2 * np.diag(inst.Sigma_P)


def lemma1_residual(inst, state):
    """Gibbs-risk lambda-gradient minus the mean-predictor lambda-gradient.

    Returns ``(residual, stated, exact)``: the residual from two independent
    gradient paths, the stated regularizer ``w^2 Sigma_ii / 2``, and the exact
    algebraic value ``(1/2 - lam) w^2 Sigma_ii``.
    """
    lhs = gibbs_risk_grad_lambda(inst, state)
    chain = state.w * mean_predictor_grad(inst, state.mean_weights)
    residual = lhs - chain
    exact = (0.5 - state.lam) * state.w ** 2 * np.diag(inst.Sigma_P)
    return residual, stated_regularizer(inst, state.w), exact


def least_squares(inst):
    """Minimizer of the empirical squared error; returns ``(w, singular)``.

    Uses a Cholesky solve; if Sigma is numerically singular its eigenvalues
    are floored at ``EIG_FLOOR`` and the flag is raised.
    """
    S, A = inst.Sigma_P, inst.A_P
    try:
        L = np.linalg.cholesky(S)
        if np.min(np.diag(L)) ** 2 > EIG_FLOOR * max(1.0, np.max(np.diag(S))):
            y = np.linalg.solve(L, A)
            return np.linalg.solve(L.T, y), False
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(S)
    inv = np.where(vals > EIG_FLOOR, 1.0 / np.maximum(vals, EIG_FLOOR), 0.0)
    warnings.warn("feature covariance is singular; using floored pseudo-inverse", RuntimeWarning)
    return vecs @ (inv * (vecs.T @ A)), True


# -- drift, optimal posterior, KL regimes -------------------------------------

@dataclass
class DriftTerm:
    Delta: np.ndarray
    kappa: float
    r0: np.ndarray

    @property
    def eta(self):
        return self.Delta / self.kappa


def drift_term(inst, w, zeta):
    """Drift r0 - w * A(Pbar) and kappa = zeta / (N - M)."""
    n_bar = inst.N - inst.M
    if n_bar <= 0:
        raise ValueError("drift needs a non-empty held-out split")
    w = np.asarray(w, dtype=np.float64)
    r0 = stated_regularizer(inst, w)
    return DriftTerm(r0 - w * inst.A_Pbar, zeta / n_bar, r0)


def _check_lam0(lam0):
    lam0 = np.asarray(lam0, dtype=np.float64)
    if np.any((lam0 <= 0) | (lam0 >= 1)):
        raise ValueError("prior keep probabilities must lie in (0, 1)")
    return lam0


def lambda_infinity(lam0, Delta, kappa):
    """Fixed point of the Catoni objective in lam for identity covariance."""
    lam0 = _check_lam0(lam0)
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    eta = np.asarray(Delta, dtype=np.float64) / kappa
    # lam0 / (lam0 + (1-lam0) e^eta) written as a sigmoid of the shifted logit
    z = np.log(lam0) - np.log1p(-lam0) - eta
    with np.errstate(over="ignore"):
        out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
    out = np.where(eta == 0, lam0, out)
    return out if out.shape else float(out)


def lambda_infinity_taylor(lam0, Delta, kappa):
    """First-order approximations ``{"small", "large_negative", "large_positive"}``."""
    lam0 = _check_lam0(lam0)
    eta = np.asarray(Delta, dtype=np.float64) / kappa
    odds = (1.0 - lam0) / lam0
    return {
        # d lam_inf / d eta = -lam0 (1 - lam0) at eta = 0
        "small": lam0 * (1.0 - eta * (1.0 - lam0)),
        "large_negative": 1.0 - odds * np.exp(eta),
        "large_positive": np.exp(-eta) / odds,
    }


def kl_drift_exact(lam0, eta):
    """kl(lam_inf || lam0) as a function of eta, via the closed form."""
    lam0 = np.asarray(lam0, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    # log(e^eta (1-lam0) + lam0) = logaddexp(eta + log(1-lam0), log lam0)
    lse = np.logaddexp(eta + np.log1p(-lam0), np.log(lam0))
    frac = 1.0 / (1.0 + np.exp(np.log(lam0) - np.log1p(-lam0) - eta))
    out = -lse + eta * frac
    return np.maximum(out, 0.0)


def kl_drift_regimes(lam0, Delta, kappa):
    lam0 = _check_lam0(lam0)
    eta = np.asarray(Delta, dtype=np.float64) / kappa
    exact = kl_drift_exact(lam0, eta)
    small = eta ** 2 * lam0 * (1.0 - lam0)
    pos = eta * lam0
    neg = np.abs(eta) * lam0 / (1.0 - lam0) - np.log(lam0)
    regime = np.where(np.abs(eta) < SMALL_ETA, "small",
                      np.where(eta > LARGE_ETA, "large_positive",
                               np.where(eta < -LARGE_ETA, "large_negative", "middle")))
    approx = np.where(regime == "small", small,
                      np.where(regime == "large_positive", pos,
                               np.where(regime == "large_negative", neg, np.nan)))
    return {"exact_kl": exact, "regime": regime, "approx_kl": approx,
            "kl_check": kl_bernoulli(lambda_infinity(lam0, Delta, kappa), lam0)}


def loglog_slope(x, y):
    """Least-squares slope of log y against log x."""
    lx, ly = np.log(np.abs(x)), np.log(y)
    return float(np.polyfit(lx, ly, 1)[0])


def euler_gradient_flow(lam0, Delta, kappa, h=1e-4, tol=1e-10, max_steps=50_000_000):
    """Integrate the lam-flow of the Catoni objective to rest.

    The rate is preconditioned by lam (1 - lam) / kappa so the step stays
    stable as lam approaches 0 or 1; the fixed point is unchanged.
    Returns ``(lam, steps)``.
    """
    lam0 = _check_lam0(lam0)
    eta = np.asarray(Delta, dtype=np.float64) / kappa
    return kernels.euler_flow(lam0, eta, h, tol, max_steps)


# -- correlated features ------------------------------------------------------

@dataclass
class RatioReport:
    ratio: float
    singular: bool
    pruned_first: str
    exact_ratio: float
    exact_point: tuple = field(default=(math.nan, math.nan))


def correlated_ratio(A_i, A_j, sigma_ij, tol=1e-12):
    """Closed-form prior keep-probability ratio for two correlated features.

    Unit variances and a single off-diagonal covariance ``sigma_ij``.  Besides
    the printed closed form, the exact stationary point of the two-weight
    Gibbs risk (with least-squares weights) is returned for comparison.
    ``pruned_first`` names the weight the sign rule predicts is pruned.
    """
    s = float(sigma_ij)
    c = A_j / A_i
    num = (c + s) * (1.0 / c - s)
    den = (c - s) * (1.0 / c + s)
    singular = abs(den) < tol
    ratio = math.nan if singular else num / den
    same = np.sign(A_i) * np.sign(A_j) == np.sign(s)
    smaller = "i" if abs(A_i) < abs(A_j) else "j"
    larger = "j" if smaller == "i" else "i"
    if abs(A_i) == abs(A_j) or s == 0:
        pruned = "tie"
    else:
        pruned = smaller if same else larger

    Sigma = np.array([[1.0, s], [s, 1.0]])
    A = np.array([A_i, A_j], dtype=np.float64)
    w = np.linalg.solve(Sigma, A)
    point = stationary_point(Sigma, A, w)
    exact = point[0] / point[1] if np.all(np.isfinite(point)) and point[1] != 0 else math.nan
    return RatioReport(ratio, singular, pruned, exact, tuple(point))


def stationary_point(Sigma, A, w):
    """Solve grad_lambda = 0 of the D=2 Gibbs risk (linear in lambda)."""
    s = Sigma[0, 1]
    if s == 0 or w[0] == 0 or w[1] == 0:
        return np.array([math.nan, math.nan])
    lam_j = (A[0] - 0.5 * w[0] * Sigma[0, 0]) / (w[1] * s)
    lam_i = (A[1] - 0.5 * w[1] * Sigma[1, 1]) / (w[0] * s)
    return np.array([lam_i, lam_j])


# -- exact-gradient pruning of a linear model ----------------------------------

def pft_linear_demo(inst, w, lam_init, steps, lr):
    """Projected gradient descent on lam in [0, 1] with exact gradients.

    Returns ``(lams, risks)`` with ``steps + 1`` rows.
    """
    w = np.asarray(w, dtype=np.float64)
    lam = np.clip(np.asarray(lam_init, dtype=np.float64).copy(), 0.0, 1.0)
    lams = [lam.copy()]
    risks = [gibbs_risk_closed_form(inst, GibbsLinearState(w, lam))]
    for _ in range(steps):
        g = gibbs_risk_grad_lambda(inst, GibbsLinearState(w, lam))
        lam = np.clip(lam - lr * g, 0.0, 1.0)
        lams.append(lam.copy())
        risks.append(gibbs_risk_closed_form(inst, GibbsLinearState(w, lam)))
    return np.array(lams), np.array(risks)


def projected_gradient(lam, grad):
    """Zero out gradient components that point outside the unit box."""
    pg = np.array(grad, dtype=np.float64)
    pg[(lam <= 0.0) & (pg > 0)] = 0.0
    pg[(lam >= 1.0) & (pg < 0)] = 0.0
    return pg
