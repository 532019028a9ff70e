"""Joint prior construction for the state-space SIR model.

The prior has five sampled coordinates and a deterministic completion:

* i0, the initial infectious proportion: Beta, moment-matched to a given
  mean and variance (the initial susceptible proportion is fixed at 0.95).
* pi, the epidemic peak intensity: normal truncated to (i0, 1).
* pt, the peak timing in model days: normal truncated to (53, 413).
* kappa, lambda, the state and observation precisions: Gammas (shape-rate).
* rho = gamma/beta follows by inverting the closed-form peak intensity, and
  beta follows from a polynomial regression of log(beta) on logs of
  (pt, i0, rho) fitted to a grid of simulated SIR curves; gamma = beta * rho.

``fit_beta_regression`` regenerates the regression from the grid simulation;
``bundled_regression_model`` loads the published coefficient table shipped in
``assets/table_s1.json``. The regenerated fit is the default because it is
self-consistent with this package's integrator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .distributions import (
    TruncNormalSpec,
    sample_beta,
    sample_gamma,
    sample_trunc_normal,
)
from .sir import invert_rho, peak_timing_batch

__all__ = [
    "PriorSpec",
    "RegressionModel",
    "ModelParams",
    "COVARIATE_NAMES",
    "beta_moment_shapes",
    "build_grid",
    "design_matrix",
    "fit_beta_regression",
    "beta_from_regression",
    "bundled_regression_model",
    "sample_prior",
    "sample_prior_batch",
]

S0_DEFAULT = 0.95

# Monomial exponents of (log pt, log i0, log rho), in the fixed published order.
_EXPONENTS = (
    (0, 0, 0), (1, 0, 0), (2, 0, 0), (0, 1, 0), (0, 2, 0),
    (0, 0, 1), (0, 0, 2), (0, 0, 3), (0, 0, 4),
    (0, 1, 1), (0, 2, 1), (0, 1, 2), (0, 2, 2), (0, 1, 3), (0, 2, 3), (0, 1, 4), (0, 2, 4),
    (1, 1, 0), (1, 0, 1), (2, 1, 0), (1, 2, 0), (2, 0, 1), (2, 0, 2),
    (3, 0, 0), (4, 0, 0), (3, 1, 0), (2, 2, 0), (0, 3, 0),
)

COVARIATE_NAMES = (
    "intercept", "pt", "pt2", "i0", "i02",
    "rho", "rho2", "rho3", "rho4",
    "i0.rho", "i02.rho", "i0.rho2", "i02.rho2", "i0.rho3", "i02.rho3", "i0.rho4", "i02.rho4",
    "pt.i0", "pt.rho", "pt2.i0", "pt.i02", "pt2.rho", "pt2.rho2",
    "pt3", "pt4", "pt3.i0", "pt2.i02", "i03",
)


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the joint prior.

    ``pi_spec.lower`` is a placeholder: the actual lower truncation bound of
    the peak-intensity prior is the sampled i0, substituted at sampling time.
    """

    s0: float = S0_DEFAULT
    i0_mean: float = 8.0e-5
    i0_var: float = 1.0e-8
    pi_spec: TruncNormalSpec = TruncNormalSpec(mean=0.03, sd=0.02, lower=0.0, upper=1.0)
    pt_spec: TruncNormalSpec = TruncNormalSpec(mean=180.0, sd=60.0, lower=53.0, upper=413.0)
    kappa_shape: float = 20.0
    kappa_rate: float = 1.0e-4
    lambda_shape: float = 2.0
    lambda_rate: float = 1.0e-4

    def __post_init__(self):
        if not 0 < self.i0_var < self.i0_mean * (1.0 - self.i0_mean):
            raise ValueError("i0 moments do not define a valid Beta distribution")
        for v in (self.kappa_shape, self.kappa_rate, self.lambda_shape, self.lambda_rate):
            if v <= 0:
                raise ValueError("Gamma hyperparameters must be positive")

    @classmethod
    def for_identification_rate(cls, p: float) -> "PriorSpec":
        """Preset prior for a given identification rate (0.05, 0.1 or 0.2)."""
        if abs(p - 0.05) < 1e-12:
            return cls(i0_mean=1.5e-4)
        return cls(i0_mean=8.0e-5)


@dataclass(frozen=True)
class ModelParams:
    """One point of the sampled parameter block plus its deterministic completion.

    rho, beta, gamma and r0 are always derived from (pi, pt, i0) through
    ``derive``; they are never set independently, so a constructed instance
    cannot go stale.
    """

    i0: float
    pi: float
    pt: float
    kappa: float
    lam: float
    rho: float
    beta: float
    gamma: float
    r0: float

    @classmethod
    def derive(
        cls,
        i0: float,
        pi: float,
        pt: float,
        kappa: float,
        lam: float,
        model: "RegressionModel",
        s0: float = S0_DEFAULT,
    ) -> "ModelParams":
        if i0 <= 0 or pi <= i0 or pt <= 0 or kappa <= 0 or lam <= 0:
            raise ValueError("invalid parameter block")
        rho = invert_rho(pi, s0, i0)
        beta = float(beta_from_regression(model, pt, i0, rho))
        if not np.isfinite(beta) or beta <= 0:
            raise ValueError("regression produced a non-positive infection rate")
        return cls(i0, pi, pt, kappa, lam, rho, beta, beta * rho, 1.0 / rho)

    def theta0(self, s0: float = S0_DEFAULT) -> np.ndarray:
        """Initial state (s0, i0, 1 - s0 - i0); requires i0 < 1 - s0."""
        r0c = 1.0 - s0 - self.i0
        if r0c < 0:
            raise ValueError("i0 exceeds the mass left by the fixed s0")
        return np.array([s0, self.i0, r0c])


def beta_moment_shapes(mean: float, var: float) -> tuple[float, float]:
    """Beta shape pair (a, b) with the given mean and variance."""
    if not 0 < var < mean * (1.0 - mean):
        raise ValueError("no Beta distribution has these moments")
    common = mean * (1.0 - mean) / var - 1.0
    return mean * common, (1.0 - mean) * common


def build_grid(y1: float) -> np.ndarray:
    """Design grid of (beta, pi, i0) triples for the infection-rate regression.

    beta: 40 equally spaced points on [0.05, 1.0]; pi: 0.01 to 0.10 in steps
    of 0.01; i0: 20 equally spaced points from 0.1 * y1 up to 0.001, where y1
    is the first observed proportion. Returns the Cartesian product as an
    (8000, 3) array ordered beta-major.
    """
    lo = 0.1 * y1
    if not 0 < lo < 0.001:
        raise ValueError(f"first observation {y1!r} breaks the i0 grid ordering")
    betas = np.linspace(0.05, 1.0, 40)
    pis = np.arange(1, 11) * 0.01
    i0s = np.linspace(lo, 0.001, 20)
    b, p, i = np.meshgrid(betas, pis, i0s, indexing="ij")
    return np.column_stack([b.ravel(), p.ravel(), i.ravel()])


def design_matrix(log_pt, log_i0, log_rho) -> np.ndarray:
    """Design matrix of the 28 monomials in (log pt, log i0, log rho)."""
    lpt = np.atleast_1d(np.asarray(log_pt, dtype=float))
    li0 = np.atleast_1d(np.asarray(log_i0, dtype=float))
    lrho = np.atleast_1d(np.asarray(log_rho, dtype=float))
    lpt, li0, lrho = np.broadcast_arrays(lpt, li0, lrho)
    cols = [lpt ** a * li0 ** b * lrho ** c for a, b, c in _EXPONENTS]
    return np.column_stack(cols)


@dataclass(frozen=True)
class RegressionModel:
    """Coefficients of the degenerate log-infection-rate prior.

    ``tau`` holds the 28 coefficients in the order of COVARIATE_NAMES and
    ``sigma2`` the residual variance of the fit; the prior for beta is the
    point mass exp(x . tau + sigma2 / 2) at given (pt, i0, rho).
    """

    tau: np.ndarray
    sigma2: float
    r_squared: float | None = None

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.shape != (28,):
            raise ValueError("expected exactly 28 regression coefficients")
        object.__setattr__(self, "tau", tau)
        if self.sigma2 <= 0:
            raise ValueError("residual variance must be positive")

    def to_json(self, path) -> None:
        doc = {
            "sigma2": self.sigma2,
            "coefficients": {name: float(v) for name, v in zip(COVARIATE_NAMES, self.tau)},
        }
        if self.r_squared is not None:
            doc["r_squared"] = self.r_squared
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def from_json(cls, path) -> "RegressionModel":
        doc = json.loads(Path(path).read_text())
        coeffs = doc["coefficients"]
        missing = [n for n in COVARIATE_NAMES if n not in coeffs]
        if missing:
            raise ValueError(f"coefficient file lacks {missing}")
        tau = np.array([coeffs[n] for n in COVARIATE_NAMES], dtype=float)
        return cls(tau=tau, sigma2=float(doc["sigma2"]), r_squared=doc.get("r_squared"))


def bundled_regression_model() -> RegressionModel:
    """The published coefficient table shipped with the package."""
    return RegressionModel.from_json(resources.files("sssir").joinpath("assets/table_s1.json"))


def fit_beta_regression(
    grid: np.ndarray,
    s0: float = S0_DEFAULT,
    substeps: int = 10,
    horizon: int = 2500,
) -> RegressionModel:
    """Fit log(beta) on the 28 covariates over simulated grid trajectories.

    For each (beta, pi, i0) triple, rho follows from the peak-intensity
    inversion, gamma = beta * rho, and the peak time is read off the RK4
    trajectory. Censored or degenerate rows are dropped before the ordinary
    least squares fit. Raises if the design matrix is rank deficient.
    """
    grid = np.asarray(grid, dtype=float)
    beta = grid[:, 0]
    pi = grid[:, 1]
    i0 = grid[:, 2]
    rho = invert_rho(pi, s0, i0)
    gamma = beta * rho
    theta0 = np.column_stack([np.full(len(grid), s0), i0, 1.0 - s0 - i0])

    pt = np.empty(len(grid))
    censored = np.empty(len(grid), dtype=bool)
    degenerate = np.empty(len(grid), dtype=bool)
    # chunk over the beta-major layout: large-beta chunks retire quickly
    chunk = max(1, len(grid) // 40)
    for start in range(0, len(grid), chunk):
        sl = slice(start, start + chunk)
        t, _, c, d = peak_timing_batch(theta0[sl], beta[sl], gamma[sl], horizon, substeps)
        pt[sl], censored[sl], degenerate[sl] = t, c, d

    keep = ~(censored | degenerate) & (pt > 0)
    if keep.sum() < 56:
        raise ValueError("too few usable grid rows for the regression")
    x = design_matrix(np.log(pt[keep]), np.log(i0[keep]), np.log(rho[keep]))
    ydep = np.log(beta[keep])
    tau, _, rank, _ = np.linalg.lstsq(x, ydep, rcond=None)
    if rank < 28:
        raise ValueError("rank-deficient design matrix; degenerate grid")
    resid = ydep - x @ tau
    rss = float(resid @ resid)
    sigma2 = rss / (keep.sum() - 28)
    tss = float(((ydep - ydep.mean()) ** 2).sum())
    return RegressionModel(tau=tau, sigma2=sigma2, r_squared=1.0 - rss / tss)


def beta_from_regression(model: RegressionModel, pt, i0, rho):
    """Infection rate exp(x . tau + sigma2 / 2) at given (pt, i0, rho)."""
    pt = np.asarray(pt, dtype=float)
    i0 = np.asarray(i0, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(pt <= 0) or np.any(i0 <= 0) or np.any(rho <= 0):
        raise ValueError("regression covariates must be positive")
    x = design_matrix(np.log(pt), np.log(i0), np.log(rho))
    out = np.exp(x @ model.tau + 0.5 * model.sigma2)
    return float(out[0]) if np.ndim(pt) == 0 and np.ndim(i0) == 0 and np.ndim(rho) == 0 else out


def sample_prior_batch(
    rng: np.random.Generator,
    spec: PriorSpec,
    model: RegressionModel,
    n: int,
    max_retries: int = 100,
) -> dict[str, np.ndarray]:
    """Draw n independent parameter blocks from the joint prior, vectorized.

    Returns arrays keyed i0, pi, pt, kappa, lam, rho, beta, gamma, r0 and
    theta0 (n, 3). Peak-intensity draws that fall outside the invertible
    range (pi >= i0 + s0) are redrawn, up to ``max_retries`` rounds.
    """
    a, b = beta_moment_shapes(spec.i0_mean, spec.i0_var)
    i0 = sample_beta(rng, a, b, size=n)
    i0 = np.minimum(i0, 1.0 - spec.s0 - 1e-12)  # keep theta0 on the simplex

    pi = sample_trunc_normal(rng, replace(spec.pi_spec, lower=i0, upper=1.0))
    for _ in range(max_retries):
        bad = pi >= i0 + spec.s0
        if not np.any(bad):
            break
        pi = np.where(
            bad,
            sample_trunc_normal(rng, replace(spec.pi_spec, lower=i0, upper=1.0)),
            pi,
        )
    else:
        raise RuntimeError("peak-intensity prior kept leaving the invertible range")

    pt = sample_trunc_normal(rng, spec.pt_spec, size=n)
    kappa = sample_gamma(rng, spec.kappa_shape, spec.kappa_rate, size=n)
    lam = sample_gamma(rng, spec.lambda_shape, spec.lambda_rate, size=n)

    rho = invert_rho(pi, spec.s0, i0)
    beta = beta_from_regression(model, pt, i0, rho)
    theta0 = np.column_stack([np.full(n, spec.s0), i0, 1.0 - spec.s0 - i0])
    return {
        "i0": np.atleast_1d(i0),
        "pi": np.atleast_1d(pi),
        "pt": np.atleast_1d(pt),
        "kappa": np.atleast_1d(kappa),
        "lam": np.atleast_1d(lam),
        "rho": np.atleast_1d(rho),
        "beta": np.atleast_1d(beta),
        "gamma": np.atleast_1d(beta * rho),
        "r0": np.atleast_1d(1.0 / rho),
        "theta0": theta0,
    }


def sample_prior(rng: np.random.Generator, spec: PriorSpec, model: RegressionModel) -> ModelParams:
    """One draw from the joint prior as a ModelParams instance."""
    d = sample_prior_batch(rng, spec, model, 1)
    return ModelParams.derive(
        float(d["i0"][0]), float(d["pi"][0]), float(d["pt"][0]),
        float(d["kappa"][0]), float(d["lam"][0]), model, spec.s0,
    )
