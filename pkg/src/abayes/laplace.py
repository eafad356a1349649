"""Laplace approximations and a small dense nested-Laplace scheme for latent Gaussian models.

A latent Gaussian model has hyperparameters ``phi`` (at most two), a latent
field ``x | phi ~ N(0, Q(phi)^{-1})`` and observations that are independent
given the linear predictor ``eta = A x``. For each ``phi`` the conditional
``p(x | phi, y)`` is replaced by a Gaussian at its mode, which gives an
unnormalized ``p(phi | y)``; integrating over a grid of ``phi`` gives
hyperparameter and latent marginals and the evidence.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import linalg, optimize, special, stats

_LOG_2PI = math.log(2.0 * math.pi)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100
BOUNDARY_MASS = 0.01
LATENT_GRID_POINTS = 201
LATENT_GRID_SDS = 5.0


# ---------------------------------------------------------------------------
# Laplace interval probabilities
# ---------------------------------------------------------------------------


def _golden(f, lo, hi, tol=1e-12, max_iter=500):
    """Minimize ``f`` on ``[lo, hi]`` by golden-section search."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _fd_step(x):
    return max(1e-5, 1e-5 * abs(x))


def _second_derivative(f, x):
    h = _fd_step(x)
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


def find_mode(log_post, bracket=None):
    """Mode of a unimodal scalar log-density.

    ``bracket`` is ``(lo, hi)`` with the mode strictly inside; without it
    one is searched for from ``(-1, 1)``. Golden-section search is followed
    by finite-difference Newton refinement.
    """

    def neg(t):
        v = float(log_post(t))
        return math.inf if math.isnan(v) else -v

    if bracket is None:
        try:
            lo, mid, hi = optimize.bracket(neg, -1.0, 1.0)[:3]
        except RuntimeError:
            raise ValueError("could not bracket the mode; pass bracket=(lo, hi)") from None
        lo, hi = min(lo, hi), max(lo, hi)
    else:
        lo, hi = map(float, bracket)
        if not lo < hi:
            raise ValueError("bracket must satisfy lo < hi")
    mode = _golden(neg, lo, hi)
    for _ in range(20):
        h = _fd_step(mode)
        g = (float(log_post(mode + h)) - float(log_post(mode - h))) / (2.0 * h)
        H = _second_derivative(log_post, mode)
        if not (math.isfinite(g) and math.isfinite(H)) or H >= 0:
            break
        step = -g / H
        if not abs(step) < 0.1 * (hi - lo):
            break
        if log_post(mode + step) < log_post(mode):
            break
        mode += step
        if abs(step) < 1e-14 * max(1.0, abs(mode)):
            break
    span = hi - lo
    if mode - lo < 1e-9 * span or hi - mode < 1e-9 * span:
        raise ValueError(f"mode not bracketed: search ended at the edge of [{lo:g}, {hi:g}]")
    return mode


class LaplaceFit(NamedTuple):
    mode: float
    sd: float


def laplace_fit(log_post, bracket=None):
    """Mode and Laplace standard deviation ``(-d2/dtheta2 log_post)^{-1/2}``."""
    mode = find_mode(log_post, bracket)
    d2 = _second_derivative(log_post, mode)
    if not d2 < 0:
        raise ValueError(f"second derivative at the mode is {d2:g}; not a maximum")
    return LaplaceFit(mode, 1.0 / math.sqrt(-d2))


def laplace_interval_prob(log_post, a, b, bracket=None):
    """Laplace approximation of ``P(a < theta < b)`` for an unnormalized scalar posterior."""
    a, b = float(a), float(b)
    if not a < b:
        raise ValueError("need a < b")
    fit = laplace_fit(log_post, bracket)
    upper = stats.norm.cdf((b - fit.mode) / fit.sd)
    lower = stats.norm.cdf((a - fit.mode) / fit.sd)
    if upper > 0.5 and lower > 0.5:
        # difference of upper tails is more accurate here
        return float(stats.norm.sf((a - fit.mode) / fit.sd) - stats.norm.sf((b - fit.mode) / fit.sd))
    return float(upper - lower)


# ---------------------------------------------------------------------------
# Observation families
# ---------------------------------------------------------------------------


class GaussianObs:
    """``y_i ~ N(eta_i, 1 / tau)``.

    The noise precision is ``precision`` or, when ``hyper_index`` is set,
    the hyperparameter ``phi[hyper_index]``.
    """

    name = "gaussian"

    def __init__(self, precision=1.0, hyper_index=None):
        if hyper_index is None and not precision > 0:
            raise ValueError("noise precision must be > 0")
        self.precision = float(precision)
        self.hyper_index = hyper_index

    def _tau(self, phi):
        return self.precision if self.hyper_index is None else float(phi[self.hyper_index])

    def logpdf(self, y, eta, phi):
        tau = self._tau(phi)
        return 0.5 * (math.log(tau) - _LOG_2PI) - 0.5 * tau * (y - eta) ** 2

    def d1(self, y, eta, phi):
        return self._tau(phi) * (y - eta)

    def d2(self, y, eta, phi):
        return np.full(np.shape(eta), -self._tau(phi))


class PoissonObs:
    """``y_i ~ Poisson(exp(eta_i))``."""

    name = "poisson"

    def logpdf(self, y, eta, phi):
        return y * eta - np.exp(eta) - special.gammaln(y + 1.0)

    def d1(self, y, eta, phi):
        return y - np.exp(eta)

    def d2(self, y, eta, phi):
        return -np.exp(eta)


# ---------------------------------------------------------------------------
# Model and nested Laplace operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatentGaussianModel:
    """Hyperprior, latent precision and observation model.

    ``log_hyperprior(phi)`` returns ``-inf`` outside the support,
    ``precision(phi)`` the ``K x K`` latent precision, and ``design`` the
    ``n x K`` matrix mapping the latent field to linear predictors
    (identity when omitted).
    """

    hyper_dim: int
    latent_dim: int
    log_hyperprior: Callable
    precision: Callable
    obs: object
    design: Optional[np.ndarray] = None
    hyper_init: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 1 <= self.hyper_dim <= 2:
            raise ValueError("hyper_dim must be 1 or 2")
        if self.design is not None:
            A = np.asarray(self.design, dtype=float)
            if A.ndim != 2 or A.shape[1] != self.latent_dim:
                raise ValueError(f"design must have {self.latent_dim} columns")
            object.__setattr__(self, "design", A)

    def A(self):
        return np.eye(self.latent_dim) if self.design is None else self.design

    def phi(self, phi):
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        if phi.shape != (self.hyper_dim,):
            raise ValueError(f"phi must have length {self.hyper_dim}")
        return phi


class GaussianConditional(NamedTuple):
    mode: np.ndarray
    cov: np.ndarray
    chol: np.ndarray       # lower Cholesky factor of the negative Hessian
    n_iter: int
    grad_norm: float


def _log_joint_x(lgm, phi, y, A, Q, x):
    eta = A @ x
    return float(np.sum(lgm.obs.logpdf(y, eta, phi)) - 0.5 * x @ Q @ x)


def _precision(lgm, phi):
    Q = np.asarray(lgm.precision(phi), dtype=float)
    K = lgm.latent_dim
    if Q.shape != (K, K):
        raise ValueError(f"precision must be {K} x {K}")
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(f"latent precision is not positive definite at phi={phi}") from None
    return Q, L


def gaussian_conditional(lgm, phi, y):
    """Mode and covariance of the Gaussian approximation to ``p(x | phi, y)``.

    Newton iterations from ``x = 0`` with step halving; converged when the
    Newton step has sup-norm below ``1e-10``. The covariance is the inverse
    of ``Q(phi) - A' diag(d2 log p(y | eta)) A`` at the mode.
    """
    phi = lgm.phi(phi)
    y = np.asarray(y, dtype=float).ravel()
    A = lgm.A()
    Q, _ = _precision(lgm, phi)
    x = np.zeros(lgm.latent_dim)
    f = _log_joint_x(lgm, phi, y, A, Q, x)
    grad = None
    for it in range(1, NEWTON_MAX_ITER + 1):
        eta = A @ x
        grad = A.T @ lgm.obs.d1(y, eta, phi) - Q @ x
        H = Q + (A.T * -lgm.obs.d2(y, eta, phi)) @ A
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(f"negative Hessian not positive definite at Newton step {it}") from None
        step = linalg.cho_solve((L, True), grad)
        t = 1.0
        while True:
            x_new = x + t * step
            f_new = _log_joint_x(lgm, phi, y, A, Q, x_new)
            if f_new >= f - 1e-12 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        x, f = x_new, f_new
        if np.max(np.abs(t * step)) < NEWTON_TOL:
            break
    else:
        raise RuntimeError(
            f"Newton did not converge in {NEWTON_MAX_ITER} steps; last gradient sup-norm "
            f"{np.max(np.abs(grad)):.3g}"
        )
    eta = A @ x
    grad = A.T @ lgm.obs.d1(y, eta, phi) - Q @ x
    H = Q + (A.T * -lgm.obs.d2(y, eta, phi)) @ A
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("negative Hessian at the mode is not positive definite") from None
    cov = linalg.cho_solve((L, True), np.eye(lgm.latent_dim))
    return GaussianConditional(x, 0.5 * (cov + cov.T), L, it, float(np.max(np.abs(grad))))


def laplace_hyper_marginal(lgm, phi, y):
    """Unnormalized ``log p(phi | y)`` from the Gaussian approximation at the conditional mode.

    Equals ``log p(y | x, phi) + log p(x | phi) + log p(phi) - log p_G(x | phi, y)``
    at ``x = x_hat(phi)``; exact (``= log p(y, phi)``) for Gaussian observations.
    """
    phi = lgm.phi(phi)
    lp = float(lgm.log_hyperprior(phi))
    if not math.isfinite(lp):
        return -math.inf
    y = np.asarray(y, dtype=float).ravel()
    gc = gaussian_conditional(lgm, phi, y)
    A = lgm.A()
    Q, LQ = _precision(lgm, phi)
    x = gc.mode
    loglik = float(np.sum(lgm.obs.logpdf(y, A @ x, phi)))
    half_logdet_q = float(np.sum(np.log(np.diag(LQ))))
    half_logdet_h = float(np.sum(np.log(np.diag(gc.chol))))
    return loglik + half_logdet_q - 0.5 * float(x @ Q @ x) + lp - half_logdet_h


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Per-hyperparameter grid ``center +- half_width * scale`` with ``n_points`` nodes."""

    center: tuple
    scale: tuple
    half_width: float = 3.0
    n_points: int = 15

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        s = tuple(float(v) for v in np.atleast_1d(self.scale))
        if len(c) != len(s):
            raise ValueError("center and scale must have equal length")
        if not all(v > 0 for v in s):
            raise ValueError("grid scales must be > 0")
        if not self.half_width > 0:
            raise ValueError("half_width must be > 0")
        if self.n_points < 5 or self.n_points % 2 == 0:
            raise ValueError(f"n_points must be odd and >= 5, got {self.n_points}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "scale", s)

    @property
    def dim(self):
        return len(self.center)

    def axes(self):
        u = np.linspace(-self.half_width, self.half_width, self.n_points)
        return [c + s * u for c, s in zip(self.center, self.scale)]

    def refined(self, factor=2):
        """Same span with ``factor`` times as many cells."""
        return GridSpec(self.center, self.scale, self.half_width, factor * (self.n_points - 1) + 1)


def _trapezoid_weights(axis):
    w = np.empty_like(axis)
    d = np.diff(axis)
    w[0], w[-1] = d[0] / 2, d[-1] / 2
    w[1:-1] = (d[:-1] + d[1:]) / 2
    return w


def default_grid(lgm, y, half_width=3.0, n_points=15, init=None):
    """Grid centred on the mode of ``p~(phi | y)`` with Laplace-curvature scales."""
    y = np.asarray(y, dtype=float).ravel()
    x0 = np.atleast_1d(np.asarray(init if init is not None else lgm.hyper_init, dtype=float))
    if x0.shape != (lgm.hyper_dim,):
        raise ValueError("an initial hyperparameter value is required (hyper_init)")

    def neg(phi):
        v = laplace_hyper_marginal(lgm, phi, y)
        return 1e300 if not math.isfinite(v) else -v

    res = optimize.minimize(neg, x0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 20_000})
    mode = res.x
    m = lgm.hyper_dim
    H = np.empty((m, m))
    h = np.maximum(1e-4, 1e-4 * np.abs(mode))
    f0 = -neg(mode)
    for i in range(m):
        for j in range(m):
            ei, ej = np.eye(m)[i] * h[i], np.eye(m)[j] * h[j]
            if i == j:
                H[i, i] = (-neg(mode + ei) - 2 * f0 - neg(mode - ei)) / h[i] ** 2
            else:
                H[i, j] = (-neg(mode + ei + ej) + neg(mode + ei - ej) + neg(mode - ei + ej)
                           - neg(mode - ei - ej)) / (4 * h[i] * h[j])
    try:
        cov = np.linalg.inv(-H)
        sd = np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError:
        sd = np.full(m, np.nan)
    if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
        raise ValueError("hyperparameter posterior curvature is not negative definite at its mode")
    return GridSpec(tuple(mode), tuple(sd), half_width, n_points)


class HyperGrid(NamedTuple):
    axes: list
    log_density: np.ndarray     # unnormalized, shape of the product grid
    weights: np.ndarray         # trapezoid cell weights, same shape
    conditionals: dict          # node index -> GaussianConditional


def evaluate_grid(lgm, grid, y, keep_conditionals=False):
    """``log p~(phi | y)`` at every node of the product grid."""
    if grid.dim != lgm.hyper_dim:
        raise ValueError(f"grid has {grid.dim} axes, model has {lgm.hyper_dim} hyperparameters")
    y = np.asarray(y, dtype=float).ravel()
    axes = grid.axes()
    shape = tuple(len(a) for a in axes)
    logd = np.empty(shape)
    conds = {}
    for idx in itertools.product(*(range(n) for n in shape)):
        phi = np.array([axes[j][i] for j, i in enumerate(idx)])
        logd[idx] = laplace_hyper_marginal(lgm, phi, y)
        if keep_conditionals and math.isfinite(logd[idx]):
            conds[idx] = gaussian_conditional(lgm, phi, y)
    w = _trapezoid_weights(axes[0])
    for a in axes[1:]:
        w = np.multiply.outer(w, _trapezoid_weights(a))
    if not np.any(np.isfinite(logd)):
        raise ValueError("hyperparameter density is zero on the whole grid")
    return HyperGrid(axes, logd, w, conds)


def _check_boundary(hg):
    mass = hg.weights * np.exp(hg.log_density - np.max(hg.log_density))
    edge = np.zeros(mass.shape, dtype=bool)
    for ax in range(mass.ndim):
        sl = [slice(None)] * mass.ndim
        sl[ax] = 0
        edge[tuple(sl)] = True
        sl[ax] = -1
        edge[tuple(sl)] = True
    frac = float(mass[edge].sum() / mass.sum())
    if frac > BOUNDARY_MASS:
        raise ValueError(f"{100 * frac:.2f}% of the hyperparameter mass sits on the grid boundary; "
                         "widen the grid (larger half_width)")
    return mass / mass.sum()


class GridDensity(NamedTuple):
    """A density tabulated on a grid, trapezoid-normalized."""

    x: np.ndarray
    density: np.ndarray

    def integral(self):
        return float(np.trapezoid(self.density, self.x))

    def mean(self):
        return float(np.trapezoid(self.x * self.density, self.x))

    def sd(self):
        m = self.mean()
        return float(math.sqrt(np.trapezoid((self.x - m) ** 2 * self.density, self.x)))


def hyper_marginal_grid(lgm, j, grid, y):
    """Marginal density of hyperparameter ``j`` (1-based) on its grid axis."""
    if not 1 <= j <= lgm.hyper_dim:
        raise ValueError(f"j must lie in 1..{lgm.hyper_dim}")
    hg = evaluate_grid(lgm, grid, y)
    _check_boundary(hg)
    dens = np.exp(hg.log_density - np.max(hg.log_density))
    for ax in reversed(range(dens.ndim)):
        if ax != j - 1:
            dens = np.tensordot(dens, _trapezoid_weights(hg.axes[ax]), axes=([ax], [0]))
    x = hg.axes[j - 1]
    return GridDensity(x, dens / np.trapezoid(dens, x))


def latent_marginal(lgm, k, grid, y):
    """Marginal density of latent coordinate ``k`` (1-based).

    A mixture over grid nodes of the Gaussian conditionals
    ``N(x_hat_k(phi), Sigma_kk(phi))`` weighted by ``p~(phi | y)`` times the
    trapezoid cell size, tabulated on ``mean +- 5 sd`` with 201 points and
    normalized by the trapezoid rule.
    """
    if not 1 <= k <= lgm.latent_dim:
        raise ValueError(f"k must lie in 1..{lgm.latent_dim}")
    hg = evaluate_grid(lgm, grid, y, keep_conditionals=True)
    probs = _check_boundary(hg)
    idxs = [i for i in hg.conditionals if probs[i] > 0]
    p = np.array([probs[i] for i in idxs])
    p /= p.sum()
    mu = np.array([hg.conditionals[i].mode[k - 1] for i in idxs])
    var = np.array([hg.conditionals[i].cov[k - 1, k - 1] for i in idxs])
    mean = float(p @ mu)
    sd = math.sqrt(float(p @ (var + mu**2)) - mean**2)
    x = np.linspace(mean - LATENT_GRID_SDS * sd, mean + LATENT_GRID_SDS * sd, LATENT_GRID_POINTS)
    dens = p @ stats.norm.pdf(x[None, :], mu[:, None], np.sqrt(var)[:, None])
    return GridDensity(x, dens / np.trapezoid(dens, x))


def marginal_likelihood_laplace(lgm, grid, y):
    """``log`` of the trapezoid integral of ``exp(log p~(phi | y))`` over the grid."""
    hg = evaluate_grid(lgm, grid, y)
    _check_boundary(hg)
    fin = np.isfinite(hg.log_density)
    top = np.max(hg.log_density[fin])
    return float(top + math.log(np.sum(hg.weights[fin] * np.exp(hg.log_density[fin] - top))))
