"""Single-track Gaussian inference: linear prediction, Kalman detection
update and an unscented update against an arbitrary log-likelihood."""

from dataclasses import dataclass

import numpy as np

LOG_FLOOR = -700.0
_JITTER = 1e-9


class NumericError(ArithmeticError):
    """Raised when a covariance or innovation matrix is not usable."""


@dataclass(frozen=True)
class GaussianDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class UtConfig:
    """Unscented transform spread parameters.

    ``kappa`` defaults to 1 so the centre sigma point carries positive
    weight; with ``kappa = 0`` and ``alpha = 1`` the centre weight is zero.
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    def weights(self, n):
        lam = self.alpha**2 * (n + self.kappa) - n
        wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + (1.0 - self.alpha**2 + self.beta)
        return lam, wm, wc


def symmetrize(cov):
    return 0.5 * (cov + cov.T)


def is_spd(cov):
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return False
    return True


def cap_covariance(cov, cap=10.0, pos_idx=(0, 2)):
    """Shrink ``cov`` so every positional standard deviation is at most ``cap``.

    The positional block is eigen-clipped to ``cap**2`` and the whole matrix
    is transformed by the same (contracting) congruence, which keeps the
    position/velocity correlation structure and positive definiteness.
    """
    cov = np.asarray(cov, dtype=float)
    idx = np.asarray(pos_idx)
    block = cov[np.ix_(idx, idx)]
    vals, vecs = np.linalg.eigh(block)
    limit = cap * cap
    if np.all(vals <= limit):
        return cov
    scale = np.sqrt(np.minimum(vals, limit) / vals)
    transform = np.eye(cov.shape[0])
    transform[np.ix_(idx, idx)] = (vecs * scale) @ vecs.T
    return symmetrize(transform @ cov @ transform.T)


def predict(prior, F, Q, cap=None):
    mean = F @ prior.mean
    cov = symmetrize(F @ prior.cov @ F.T + Q)
    if cap is not None:
        cov = cap_covariance(cov, cap)
    if not is_spd(cov):
        raise NumericError("predicted covariance is not positive definite")
    return GaussianDensity(mean, cov)


def _innovation(prior, H, Sigma):
    S = symmetrize(H @ prior.cov @ H.T + Sigma)
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericError("innovation covariance is singular") from exc
    return S, chol


def kalman_gain_and_cov(prior, H, Sigma):
    """Gain, Joseph-form posterior covariance and innovation Cholesky factor.

    These do not depend on the measurement value, so callers updating one
    prior against many detections compute them once.
    """
    S, chol = _innovation(prior, H, Sigma)
    PHt = prior.cov @ H.T
    K = np.linalg.solve(S, PHt.T).T
    A = np.eye(prior.dim) - K @ H
    cov = symmetrize(A @ prior.cov @ A.T + K @ Sigma @ K.T)
    return K, cov, chol


def gaussian_logpdf_chol(resid, chol):
    """log N(resid; 0, S) for rows of ``resid`` given lower Cholesky of S."""
    resid = np.atleast_2d(resid)
    sol = np.linalg.solve(chol, resid.T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    d = chol.shape[0]
    return -0.5 * (maha + logdet + d * np.log(2.0 * np.pi))


def kalman_update(prior, z, H, Sigma):
    """Kalman posterior and log predictive likelihood log N(z; H m, S)."""
    z = np.asarray(z, dtype=float)
    K, cov, chol = kalman_gain_and_cov(prior, H, Sigma)
    resid = z - H @ prior.mean
    mean = prior.mean + K @ resid
    loglik = float(gaussian_logpdf_chol(resid, chol)[0])
    return GaussianDensity(mean, cov), loglik


def kalman_update_many(prior, Z, H, Sigma):
    """Vectorised :func:`kalman_update` over the rows of ``Z``.

    Returns posterior means ``(M, n)``, the shared posterior covariance and
    the ``(M,)`` log predictive likelihoods.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, H.shape[0])
    K, cov, chol = kalman_gain_and_cov(prior, H, Sigma)
    resid = Z - H @ prior.mean
    means = prior.mean + resid @ K.T
    if len(Z) == 0:
        return means, cov, np.zeros(0)
    return means, cov, gaussian_logpdf_chol(resid, chol)


def sigma_points(prior, cfg):
    n = prior.dim
    lam, wm, wc = cfg.weights(n)
    try:
        root = np.linalg.cholesky((n + lam) * prior.cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError("prior covariance is not positive definite") from exc
    pts = np.empty((2 * n + 1, n))
    pts[0] = prior.mean
    pts[1 : n + 1] = prior.mean + root.T
    pts[n + 1 :] = prior.mean - root.T
    return pts, wm, wc


def unscented_update(prior, loglik, cfg=UtConfig(), cap=None, vectorized=False):
    """Reweight the prior's sigma points by ``exp(loglik)`` and moment-match.

    ``loglik`` maps a state to a real (or, with ``vectorized=True``, an
    ``(N, n)`` array of states to ``(N,)``). Returns the posterior and
    ``log sum_i w_i exp(loglik(chi_i))``, floored at ``LOG_FLOOR``.
    """
    pts, wm, _ = sigma_points(prior, cfg)
    if vectorized:
        ll = np.asarray(loglik(pts), dtype=float)
    else:
        ll = np.array([loglik(p) for p in pts], dtype=float)
    if not np.all(np.isfinite(ll) | (ll == -np.inf)):
        raise NumericError("log-likelihood is not finite at a sigma point")
    top = ll.max()
    if top == -np.inf:
        return prior, LOG_FLOOR
    rel = np.exp(ll - top)
    mass = float(wm @ rel)
    if mass <= 0.0:
        return prior, LOG_FLOOR
    log_integral = top + np.log(mass)
    if log_integral < LOG_FLOOR:
        return prior, LOG_FLOOR
    # Moment match of the reweighted point set; the beta correction only
    # applies to propagated (not reweighted) points, so wc is unused here.
    wpost = wm * rel / mass
    mean = wpost @ pts
    dev = pts - mean
    cov = symmetrize((dev * wpost[:, None]).T @ dev)
    if not is_spd(cov):
        cov = cov + _JITTER * np.eye(prior.dim) * max(1.0, np.trace(prior.cov))
        if not is_spd(cov):
            vals, vecs = np.linalg.eigh(cov)
            cov = symmetrize((vecs * np.maximum(vals, _JITTER)) @ vecs.T)
    if cap is not None:
        cov = cap_covariance(cov, cap)
    return GaussianDensity(mean, cov), float(log_integral)
