"""Metropolis-Hastings-within-Gibbs sampler for the state-space SIR posterior.

The target is proportional to

    prod_t Beta(y(t); lam*I(t), lam*(1-I(t))) * Dir(theta(t); kappa*f(theta(t-1)))
    * prior(i0, pi, pt, kappa, lam),

where f is the one-day SIR solution and theta(0) = (0.95, i0, 0.05 - i0).
Each iteration sweeps a Gaussian random-walk update over theta(1..T) in
additive-log-ratio coordinates, then updates the (i0, pi, pt, kappa) block
jointly in logit/log coordinates, then lambda on the log scale. Proposal
scales adapt during burn-in toward acceptance rates in [0.2, 0.4] and are
frozen afterwards, so the retained chain is a fixed-kernel MH sampler.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import gammaln

from .distributions import (
    RngStream,
    log_beta_pdf,
    log_gamma_pdf,
    log_trunc_normal_pdf,
    sample_dirichlet,
)
from .ingest import ObservationSeries
from .priors import (
    ModelParams,
    PriorSpec,
    RegressionModel,
    beta_moment_shapes,
    sample_prior,
)
from .sir import _rk4_batch, _rk4_scalar

__all__ = [
    "ChainConfig",
    "Posterior",
    "PosteriorDraws",
    "log_posterior",
    "run_chain",
    "summarize",
    "adapt_scale",
]

log = logging.getLogger(__name__)

_lgamma = math.lgamma
_log = math.log
_exp = math.exp

PT_LOWER, PT_UPPER = 53.0, 413.0


@dataclass(frozen=True)
class ChainConfig:
    """MCMC run lengths, adaptation settings and the RNG identity."""

    iterations: int = 50000
    burn_in: int = 10000
    thin: int = 10
    seed: int = 20200301
    stream_id: int = 0
    substeps: int = 10
    target_accept: tuple[float, float] = (0.2, 0.4)
    adapt_window: int = 100
    grow: float = 1.25
    shrink: float = 0.8
    init_retries: int = 100
    init_mode: str = "data"

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0:
            raise ValueError("iterations and burn_in must be nonnegative")
        if self.thin < 1 or (self.iterations and self.iterations % self.thin):
            raise ValueError("thin must divide iterations")
        lo, hi = self.target_accept
        if not 0 < lo < hi < 1:
            raise ValueError("target acceptance interval must be inside (0, 1)")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


def adapt_scale(scale: float, accept_rate: float, target=(0.2, 0.4), grow=1.25, shrink=0.8) -> float:
    """Multiplicative step-size rule: widen when accepting too often, narrow when too rarely."""
    if accept_rate > target[1]:
        return scale * grow
    if accept_rate < target[0]:
        return scale * shrink
    return scale


class Posterior:
    """The unnormalized log posterior and its per-block pieces.

    Bundles the observation series, prior hyperparameters and the regression
    backing the infection-rate link, so update kernels can evaluate exactly
    the terms they need.
    """

    def __init__(
        self,
        obs: ObservationSeries,
        prior: PriorSpec,
        model: RegressionModel,
        substeps: int = 10,
    ):
        self.obs = obs
        self.prior = prior
        self.model = model
        self.substeps = substeps
        self.t_len = obs.t
        self.y = np.asarray(obs.y, dtype=float)
        self.log_y = np.log(self.y)
        self.log1m_y = np.log1p(-self.y)
        self.i0_a, self.i0_b = beta_moment_shapes(prior.i0_mean, prior.i0_var)

    def theta0(self, i0: float) -> np.ndarray:
        return np.array([self.prior.s0, i0, 1.0 - self.prior.s0 - i0])

    def transition_means(self, theta_full: np.ndarray, beta: float, gamma: float) -> np.ndarray:
        """One-day SIR solutions f(theta(t-1)) for t = 1..T; rows may be invalid
        (non-finite) for pathological rates and are guarded in the loglik."""
        return _rk4_batch(theta_full[:-1], beta, gamma, self.substeps)

    def transition_loglik(self, theta_path: np.ndarray, fmean: np.ndarray, kappa: float) -> float:
        alpha = kappa * fmean
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            return -np.inf
        if np.any(theta_path <= 0):
            return -np.inf
        val = (
            self.t_len * gammaln(kappa)
            - gammaln(alpha).sum()
            + ((alpha - 1.0) * np.log(theta_path)).sum()
        )
        return float(val)

    def obs_loglik(self, i_path: np.ndarray, lam: float) -> float:
        if np.any(i_path <= 0) or np.any(i_path >= 1):
            return -np.inf
        a = lam * i_path
        b = lam * (1.0 - i_path)
        val = (
            self.t_len * gammaln(lam)
            - gammaln(a).sum()
            - gammaln(b).sum()
            + ((a - 1.0) * self.log_y).sum()
            + ((b - 1.0) * self.log1m_y).sum()
        )
        return float(val)

    def log_prior(self, params: ModelParams) -> float:
        """Joint prior of the sampled block; the point-mass priors on s0 and
        beta contribute constants and are omitted."""
        if params.i0 >= 1.0 - self.prior.s0:
            return -np.inf
        lp = log_beta_pdf(params.i0, self.i0_a, self.i0_b)
        lp += log_trunc_normal_pdf(
            params.pi, replace(self.prior.pi_spec, lower=params.i0, upper=1.0)
        )
        lp += log_trunc_normal_pdf(params.pt, self.prior.pt_spec)
        lp += log_gamma_pdf(params.kappa, self.prior.kappa_shape, self.prior.kappa_rate)
        lp += log_gamma_pdf(params.lam, self.prior.lambda_shape, self.prior.lambda_rate)
        return float(lp)

    def log_posterior(self, theta_path: np.ndarray, params: ModelParams) -> float:
        theta_path = np.asarray(theta_path, dtype=float)
        if theta_path.shape != (self.t_len, 3):
            raise ValueError(f"expected a ({self.t_len}, 3) latent path")
        lp = self.log_prior(params)
        if not np.isfinite(lp):
            return -np.inf
        theta_full = np.vstack([self.theta0(params.i0), theta_path])
        fmean = self.transition_means(theta_full, params.beta, params.gamma)
        lt = self.transition_loglik(theta_path, fmean, params.kappa)
        if not np.isfinite(lt):
            return -np.inf
        lo = self.obs_loglik(theta_path[:, 1], params.lam)
        return lp + lt + lo


def log_posterior(
    theta_path,
    params: ModelParams,
    obs: ObservationSeries,
    prior: PriorSpec,
    model: RegressionModel,
    substeps: int = 10,
) -> float:
    """Unnormalized log posterior density at (theta_path, params)."""
    return Posterior(obs, prior, model, substeps).log_posterior(theta_path, params)


# ---------------------------------------------------------------------------
# transformed-coordinate helpers shared by the update kernels and their tests

def _logit(p: float) -> float:
    return _log(p) - math.log1p(-p)


def _expit(x: float) -> float:
    if x >= 0:
        z = _exp(-x)
        return 1.0 / (1.0 + z)
    z = _exp(x)
    return z / (1.0 + z)


def block_to_unconstrained(params: ModelParams) -> np.ndarray:
    """(i0, pi, pt, kappa) -> (logit i0, scaled-logit pi, scaled-logit pt, log kappa)."""
    return np.array(
        [
            _logit(params.i0),
            _logit((params.pi - params.i0) / (1.0 - params.i0)),
            _logit((params.pt - PT_LOWER) / (PT_UPPER - PT_LOWER)),
            _log(params.kappa),
        ]
    )


def block_from_unconstrained(x: np.ndarray) -> tuple[float, float, float, float]:
    i0 = _expit(x[0])
    pi = i0 + (1.0 - i0) * _expit(x[1])
    pt = PT_LOWER + (PT_UPPER - PT_LOWER) * _expit(x[2])
    kappa = _exp(x[3])
    return i0, pi, pt, kappa


def block_log_jacobian(params: ModelParams) -> float:
    """log |d(i0, pi, pt, kappa) / d(unconstrained)|; the map is triangular."""
    return (
        _log(params.i0 * (1.0 - params.i0))
        + _log((params.pi - params.i0) * (1.0 - params.pi) / (1.0 - params.i0))
        + _log((params.pt - PT_LOWER) * (PT_UPPER - params.pt) / (PT_UPPER - PT_LOWER))
        + _log(params.kappa)
    )


def block_log_target(post: Posterior, theta_path: np.ndarray, params: ModelParams) -> float:
    """Density seen by the block walk: transitions + priors + Jacobian.

    The observation terms depend only on lambda and the path, so they cancel
    in the block's acceptance ratio and are omitted here.
    """
    lp = post.log_prior(params)
    if not np.isfinite(lp):
        return -np.inf
    theta_full = np.vstack([post.theta0(params.i0), theta_path])
    fmean = post.transition_means(theta_full, params.beta, params.gamma)
    lt = post.transition_loglik(theta_path, fmean, params.kappa)
    if not np.isfinite(lt):
        return -np.inf
    return lp + lt + block_log_jacobian(params)


def lambda_log_target(post: Posterior, i_path: np.ndarray, params: ModelParams) -> float:
    """Density seen by the log-lambda walk: observations + prior + Jacobian."""
    lo = post.obs_loglik(i_path, params.lam)
    if not np.isfinite(lo):
        return -np.inf
    return (
        lo
        + log_gamma_pdf(params.lam, post.prior.lambda_shape, post.prior.lambda_rate)
        + _log(params.lam)
    )


def theta_log_target(
    post: Posterior,
    theta_t: tuple[float, float, float],
    t: int,
    fmean_in: np.ndarray,
    theta_next: np.ndarray | None,
    params: ModelParams,
):
    """Local density of theta(t) in ALR coordinates z = (log s/r, log i/r).

    Composed of the incoming transition with cached mean fmean_in, the
    outgoing transition to theta_next (absent at t = T), the observation term
    and the ALR log-Jacobian log(s i r). Returns (value, outgoing_mean); the
    outgoing mean is reused to update the cache when the proposal is accepted.
    """
    s, i, r = theta_t
    kappa, lam = params.kappa, params.lam
    lgk = _lgamma(kappa)
    val = _dirichlet3(s, i, r, fmean_in, kappa, lgk)
    f_out = None
    if theta_next is not None:
        f_out = _rk4_scalar(s, i, r, params.beta, params.gamma, post.substeps)
        val += _dirichlet3(theta_next[0], theta_next[1], theta_next[2], f_out, kappa, lgk)
    a = lam * i
    b = lam * (1.0 - i)
    val += (
        _lgamma(lam)
        - _lgamma(a)
        - _lgamma(b)
        + (a - 1.0) * post.log_y[t - 1]
        + (b - 1.0) * post.log1m_y[t - 1]
    )
    val += _log(s) + _log(i) + _log(r)
    return val, f_out


def _dirichlet3(x1, x2, x3, mean, kappa, lgk):
    a1 = kappa * mean[0]
    a2 = kappa * mean[1]
    a3 = kappa * mean[2]
    return (
        lgk
        - _lgamma(a1)
        - _lgamma(a2)
        - _lgamma(a3)
        + (a1 - 1.0) * _log(x1)
        + (a2 - 1.0) * _log(x2)
        + (a3 - 1.0) * _log(x3)
    )


def _sweep_theta(post, theta_full, fmean, params, scales, eps, log_u):
    """One forward sweep of the per-time random-walk updates, in place.

    theta_full rows 1..T and fmean rows 1..T are mutated on acceptance;
    fmean[t] always equals f(theta(t-1)) on exit. Returns per-t acceptances.
    """
    t_len = post.t_len
    accepted = np.zeros(t_len, dtype=bool)
    for t in range(1, t_len + 1):
        s, i, r = theta_full[t]
        theta_next = theta_full[t + 1] if t < t_len else None
        cur, _ = theta_log_target(post, (s, i, r), t, fmean[t], theta_next, params)

        sc = scales[t - 1]
        z1 = _log(s / r) + sc * eps[t - 1, 0]
        z2 = _log(i / r) + sc * eps[t - 1, 1]
        if abs(z1) > 500.0 or abs(z2) > 500.0:
            continue
        e1 = _exp(z1)
        e2 = _exp(z2)
        den = 1.0 + e1 + e2
        s_new, i_new, r_new = e1 / den, e2 / den, 1.0 / den
        if s_new <= 0.0 or i_new <= 0.0 or r_new <= 0.0:
            continue
        new, f_out = theta_log_target(post, (s_new, i_new, r_new), t, fmean[t], theta_next, params)
        if new - cur > log_u[t - 1]:
            theta_full[t, 0], theta_full[t, 1], theta_full[t, 2] = s_new, i_new, r_new
            if t < t_len:
                fmean[t + 1] = f_out
            accepted[t - 1] = True
    return accepted


def _update_block(post, theta_full, fmean, params, scales, eps, log_u):
    """Joint random-walk update of (i0, pi, pt, kappa); returns (params, accepted)."""
    x = block_to_unconstrained(params)
    x_new = x + scales * eps
    i0, pi, pt, kappa = block_from_unconstrained(x_new)
    if not (0.0 < i0 < 1.0 - post.prior.s0) or pi <= i0 or pi >= i0 + post.prior.s0:
        return params, False
    try:
        proposal = ModelParams.derive(i0, pi, pt, kappa, params.lam, post.model, post.prior.s0)
    except (ValueError, ArithmeticError):
        return params, False
    theta_path = theta_full[1:]
    cur = post.transition_loglik(theta_path, fmean[1:], params.kappa) + post.log_prior(params) + block_log_jacobian(params)
    theta0_new = post.theta0(proposal.i0)
    prev_rows = np.vstack([theta0_new, theta_path[:-1]])
    fmean_new = _rk4_batch(prev_rows, proposal.beta, proposal.gamma, post.substeps)
    new = (
        post.transition_loglik(theta_path, fmean_new, proposal.kappa)
        + post.log_prior(proposal)
        + block_log_jacobian(proposal)
    )
    if new - cur > log_u:
        theta_full[0] = theta0_new
        fmean[1:] = fmean_new
        return proposal, True
    return params, False


def _update_lambda(post, theta_full, params, scale, eps, log_u):
    """Random walk on log lambda; returns (params, accepted)."""
    lam_new = params.lam * _exp(scale * eps)
    if not np.isfinite(lam_new) or lam_new <= 0:
        return params, False
    proposal = replace(params, lam=lam_new)
    i_path = theta_full[1:, 1]
    cur = lambda_log_target(post, i_path, params)
    new = lambda_log_target(post, i_path, proposal)
    if new - cur > log_u:
        return proposal, True
    return params, False


@dataclass
class PosteriorDraws:
    """Retained MCMC draws: scalar parameters, infectious paths, final states."""

    iteration: np.ndarray
    i0: np.ndarray
    pi: np.ndarray
    pt: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray
    rho: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    r0: np.ndarray
    i_paths: np.ndarray        # (n, T)
    final_theta: np.ndarray    # (n, 3), the latent state on the last observed day
    acceptance: dict
    substeps: int = 10

    SCALARS = ("i0", "pi", "pt", "kappa", "lam", "rho", "beta", "gamma", "r0")

    def __len__(self) -> int:
        return len(self.i0)

    @property
    def t_len(self) -> int:
        return self.i_paths.shape[1]

    def scalar(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def to_frame(self) -> pd.DataFrame:
        data = {"draw": self.iteration}
        for name in self.SCALARS:
            key = "lambda" if name == "lam" else name
            data[key] = getattr(self, name)
        data["s_final"] = self.final_theta[:, 0]
        data["r_final"] = self.final_theta[:, 2]
        frame = pd.DataFrame(data)
        ipath = pd.DataFrame(
            self.i_paths, columns=[f"I_{t}" for t in range(1, self.t_len + 1)]
        )
        return pd.concat([frame, ipath], axis=1)

    def save_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def load_csv(cls, path, substeps: int = 10) -> "PosteriorDraws":
        frame = pd.read_csv(path)
        t_cols = sorted(
            (c for c in frame.columns if c.startswith("I_")), key=lambda c: int(c[2:])
        )
        if not t_cols:
            raise ValueError(f"{path} has no infectious-path columns")
        i_paths = frame[t_cols].to_numpy()
        final_theta = np.column_stack(
            [frame["s_final"].to_numpy(), i_paths[:, -1], frame["r_final"].to_numpy()]
        )
        return cls(
            iteration=frame["draw"].to_numpy(),
            i0=frame["i0"].to_numpy(),
            pi=frame["pi"].to_numpy(),
            pt=frame["pt"].to_numpy(),
            kappa=frame["kappa"].to_numpy(),
            lam=frame["lambda"].to_numpy(),
            rho=frame["rho"].to_numpy(),
            beta=frame["beta"].to_numpy(),
            gamma=frame["gamma"].to_numpy(),
            r0=frame["r0"].to_numpy(),
            i_paths=i_paths,
            final_theta=final_theta,
            acceptance={},
            substeps=substeps,
        )


def _init_state(post: Posterior, rng, retries: int, mode: str = "data"):
    """Initialize (params, path) with a finite posterior density.

    Parameters always come from the prior. With mode="data" the latent
    infectious path starts at the observations, with the removed compartment
    accumulated at the drawn removal rate; the short burn-in profiles cannot
    recover from a prior-predictive path start (the precision parameters then
    need tens of thousands of iterations to climb to their posterior range).
    mode="prior" keeps the pure prior-predictive start.
    """
    for _ in range(retries):
        params = sample_prior(rng, post.prior, post.model)
        theta_full = np.empty((post.t_len + 1, 3))
        theta_full[0] = post.theta0(params.i0)
        if mode == "prior":
            ok = True
            for t in range(1, post.t_len + 1):
                mean = _rk4_batch(theta_full[t - 1], params.beta, params.gamma, post.substeps)
                theta_full[t] = sample_dirichlet(rng, params.kappa * mean)
                if np.any(theta_full[t] <= 0):
                    ok = False
                    break
            if not ok:
                continue
        else:
            i = post.y.copy()
            r = (1.0 - post.prior.s0 - params.i0) + params.gamma * np.cumsum(post.y)
            s = 1.0 - i - r
            if np.any(s <= 0) or np.any(r <= 0):
                continue
            theta_full[1:] = np.column_stack([s, i, r])
        if np.isfinite(post.log_posterior(theta_full[1:], params)):
            return params, theta_full
    raise RuntimeError(f"no finite-density initialization found in {retries} tries")


def run_chain(
    obs: ObservationSeries,
    prior: PriorSpec,
    model: RegressionModel,
    config: ChainConfig,
) -> PosteriorDraws:
    """Run one MH-within-Gibbs chain and return the thinned post-burn-in draws.

    Per iteration: forward sweep over theta(1..T), then the joint
    (i0, pi, pt, kappa) block, then lambda. Identical (seed, stream_id,
    config, data) replay bit-identical output.
    """
    post = Posterior(obs, prior, model, config.substeps)
    t_len = post.t_len
    rng = RngStream(config.seed, config.stream_id).generator()

    n_keep = config.iterations // config.thin
    acceptance = {
        "theta": np.zeros(t_len),
        "block": 0.0,
        "lambda": 0.0,
        "final_window": {},
        "scales": {},
    }
    empty = PosteriorDraws(
        iteration=np.empty(0, dtype=int),
        **{k: np.empty(0) for k in PosteriorDraws.SCALARS},
        i_paths=np.empty((0, t_len)),
        final_theta=np.empty((0, 3)),
        acceptance=acceptance,
        substeps=config.substeps,
    )
    if config.iterations == 0:
        return empty

    params, theta_full = _init_state(post, rng, config.init_retries, config.init_mode)
    fmean = np.empty((t_len + 1, 3))
    fmean[1:] = post.transition_means(theta_full, params.beta, params.gamma)

    theta_scales = np.full(t_len, 0.05)
    block_scales = np.full(4, 0.1)
    lambda_scale = 0.3

    win_theta = np.zeros(t_len)
    win_block = 0
    win_lambda = 0
    kept_theta = np.zeros(t_len)
    kept_block = 0
    kept_lambda = 0

    out = {name: np.empty(n_keep) for name in PosteriorDraws.SCALARS}
    out_iter = np.empty(n_keep, dtype=int)
    out_paths = np.empty((n_keep, t_len))
    out_final = np.empty((n_keep, 3))
    kept = 0

    total = config.burn_in + config.iterations
    for it in range(1, total + 1):
        eps_theta = rng.standard_normal((t_len, 2))
        log_u_theta = np.log(rng.random(t_len))
        eps_block = rng.standard_normal(4)
        log_u_block = _log(rng.random())
        eps_lambda = rng.standard_normal()
        log_u_lambda = _log(rng.random())

        acc_t = _sweep_theta(post, theta_full, fmean, params, theta_scales, eps_theta, log_u_theta)
        params, acc_b = _update_block(post, theta_full, fmean, params, block_scales, eps_block, log_u_block)
        params, acc_l = _update_lambda(post, theta_full, params, lambda_scale, eps_lambda, log_u_lambda)

        in_burn = it <= config.burn_in
        if in_burn:
            win_theta += acc_t
            win_block += acc_b
            win_lambda += acc_l
            if it % config.adapt_window == 0:
                w = config.adapt_window
                rates_t = win_theta / w
                for k in range(t_len):
                    theta_scales[k] = adapt_scale(
                        theta_scales[k], rates_t[k], config.target_accept, config.grow, config.shrink
                    )
                rate_b = win_block / w
                block_scales = np.array(
                    [
                        adapt_scale(s, rate_b, config.target_accept, config.grow, config.shrink)
                        for s in block_scales
                    ]
                )
                lambda_scale = adapt_scale(
                    lambda_scale, win_lambda / w, config.target_accept, config.grow, config.shrink
                )
                acceptance["final_window"] = {
                    "theta": rates_t.copy(),
                    "block": rate_b,
                    "lambda": win_lambda / w,
                }
                win_theta[:] = 0.0
                win_block = 0
                win_lambda = 0
        else:
            kept_theta += acc_t
            kept_block += acc_b
            kept_lambda += acc_l
            k = it - config.burn_in
            if k % config.thin == 0:
                out_iter[kept] = it
                for name in PosteriorDraws.SCALARS:
                    out[name][kept] = getattr(params, name)
                out_paths[kept] = theta_full[1:, 1]
                out_final[kept] = theta_full[t_len]
                kept += 1

    acceptance["theta"] = kept_theta / config.iterations
    acceptance["block"] = kept_block / config.iterations
    acceptance["lambda"] = kept_lambda / config.iterations
    acceptance["scales"] = {
        "theta": theta_scales.copy(),
        "block": block_scales.copy(),
        "lambda": lambda_scale,
    }
    return PosteriorDraws(
        iteration=out_iter,
        **out,
        i_paths=out_paths,
        final_theta=out_final,
        acceptance=acceptance,
        substeps=config.substeps,
    )


_QUANTS = (0.025, 0.5, 0.975)


def summarize(draws: PosteriorDraws) -> dict:
    """Medians and central 95% quantile intervals of parameters and I(t)."""
    if len(draws) == 0:
        raise ValueError("no draws to summarize")
    params = {}
    for name in PosteriorDraws.SCALARS:
        key = "lambda" if name == "lam" else name
        q = np.quantile(draws.scalar(name), _QUANTS)
        params[key] = {"q025": float(q[0]), "median": float(q[1]), "q975": float(q[2])}
    qpath = np.quantile(draws.i_paths, _QUANTS, axis=0)
    return {
        "n_draws": len(draws),
        "params": params,
        "i_path": {
            "q025": qpath[0].tolist(),
            "median": qpath[1].tolist(),
            "q975": qpath[2].tolist(),
        },
    }


def save_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2))
