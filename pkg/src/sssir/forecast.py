"""Predictive simulation: prior predictive bands and intervention forecasts.

Forecasts push parameter draws through the stochastic state-space dynamics:
each day the state moves by a Dirichlet step centered on the one-day SIR
solution, and an observation is emitted from the Beta model. Interventions
rescale the infection rate: during the first ``t_star`` forecast days beta
is multiplied by ``c``, afterwards by ``c_star``.

Per-draw peak summaries are computed from each simulated path and then
aggregated; the peak of the median curve is never used. Draws whose
infectious path is still rising at the horizon are flagged censored and
excluded from peak-timing summaries, with the censored fraction reported.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .distributions import RngStream, sample_dirichlet
from .ingest import day_to_date
from .mcmc import PosteriorDraws
from .priors import PriorSpec, RegressionModel, sample_prior_batch
from .sir import _rk4_batch

__all__ = [
    "ScenarioSpec",
    "Forecast",
    "prior_predictive",
    "posterior_forecast",
    "scenario_sweep",
    "default_scenarios",
    "forecast_frame",
]

QUANT_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)
UPPER_ONE_SIDED = 0.95


@dataclass(frozen=True)
class ScenarioSpec:
    """Intervention scenario: beta -> c*beta for t_star days, then c_star*beta."""

    c: float = 1.0
    c_star: float = 1.0
    t_star: int = 0
    horizon: int = 365

    def __post_init__(self):
        if self.c <= 0 or self.c_star <= 0:
            raise ValueError("intervention multipliers must be positive")
        if not 0 <= self.t_star <= self.horizon:
            raise ValueError("t_star must lie in [0, horizon]")

    @property
    def tag(self) -> str:
        return f"c{self.c:g}_cs{self.c_star:g}_ts{self.t_star}"

    @property
    def is_baseline(self) -> bool:
        return self.c == 1.0 and self.c_star == 1.0


def default_scenarios(horizon: int = 365) -> list[ScenarioSpec]:
    """The 6 x 3 x 3 intervention grid (54 scenarios)."""
    return [
        ScenarioSpec(c=c, c_star=cs, t_star=ts, horizon=horizon)
        for cs in (1.0, 0.9, 0.8)
        for ts in (14, 28, 45)
        for c in (0.6, 0.5, 0.4, 0.3, 0.2, 0.1)
    ]


@dataclass
class Forecast:
    """Quantile bands and peak summaries of simulated future observations.

    ``days`` are absolute model-day indices (day 1 = 2020-03-01). Quantile
    arrays are keyed by level; ``y_*`` summarize the observable proportion,
    ``i_*`` the latent infectious proportion. Peak arrays are per retained
    draw; censored draws are excluded from the timing summary.
    """

    days: np.ndarray
    y_quantiles: dict[float, np.ndarray]
    y_upper95: np.ndarray
    i_quantiles: dict[float, np.ndarray]
    i_upper95: np.ndarray
    peak_time: np.ndarray
    peak_intensity: np.ndarray
    peak_censored: np.ndarray
    scenario: ScenarioSpec | None = None
    n_draws: int = 0
    y_paths: np.ndarray | None = None
    i_paths: np.ndarray | None = None

    @property
    def censored_fraction(self) -> float:
        return float(self.peak_censored.mean()) if len(self.peak_censored) else 0.0

    def peak_summary(self) -> dict:
        out = {
            "n_draws": int(self.n_draws),
            "censored_fraction": self.censored_fraction,
        }
        usable = ~self.peak_censored
        if usable.any():
            pt = self.peak_time[usable]
            q = np.quantile(pt, (0.025, 0.5, 0.975))
            out["peak_time"] = {"q025": float(q[0]), "median": float(q[1]), "q975": float(q[2])}
            out["peak_date"] = day_to_date(float(q[1])).isoformat()
        pi = self.peak_intensity
        q = np.quantile(pi, (0.025, 0.5, 0.975))
        out["peak_intensity"] = {"q025": float(q[0]), "median": float(q[1]), "q975": float(q[2])}
        if self.scenario is not None:
            out["scenario"] = {
                "c": self.scenario.c,
                "c_star": self.scenario.c_star,
                "t_star": self.scenario.t_star,
                "horizon": self.scenario.horizon,
            }
        return out


def _summaries(days, y_paths, i_paths, scenario, keep_paths):
    yq = {q: np.quantile(y_paths, q, axis=0) for q in QUANT_LEVELS}
    iq = {q: np.quantile(i_paths, q, axis=0) for q in QUANT_LEVELS}
    y_up = np.quantile(y_paths, UPPER_ONE_SIDED, axis=0)
    i_up = np.quantile(i_paths, UPPER_ONE_SIDED, axis=0)
    idx = np.argmax(i_paths, axis=1)
    censored = idx == i_paths.shape[1] - 1
    peak_time = days[idx].astype(float)
    peak_intensity = i_paths[np.arange(len(idx)), idx]
    return Forecast(
        days=days,
        y_quantiles=yq,
        y_upper95=y_up,
        i_quantiles=iq,
        i_upper95=i_up,
        peak_time=peak_time,
        peak_intensity=peak_intensity,
        peak_censored=censored,
        scenario=scenario,
        n_draws=y_paths.shape[0],
        y_paths=y_paths if keep_paths else None,
        i_paths=i_paths if keep_paths else None,
    )


def _beta_obs(rng, lam, i):
    """Beta(lam*i, lam*(1-i)) draws via two Gammas, kept strictly inside (0, 1)."""
    g1 = rng.standard_gamma(lam * i)
    g2 = rng.standard_gamma(lam * (1.0 - i))
    total = g1 + g2
    y = np.where(total > 0, g1 / np.where(total > 0, total, 1.0), i)
    return np.clip(y, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)


def prior_predictive(
    rng: np.random.Generator,
    prior: PriorSpec,
    model: RegressionModel,
    t_len: int,
    n_draws: int,
    kappa_override: float | None = None,
    lambda_override: float | None = None,
    substeps: int = 10,
    keep_paths: bool = True,
) -> Forecast:
    """Simulate n_draws observation paths over days 1..t_len from the prior.

    The precision overrides exist for degenerate-noise checks: very large
    kappa and lambda collapse the bands onto the deterministic SIR paths.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    par = sample_prior_batch(rng, prior, model, n_draws)
    kappa = np.full(n_draws, kappa_override) if kappa_override is not None else par["kappa"]
    lam = np.full(n_draws, lambda_override) if lambda_override is not None else par["lam"]
    beta = par["beta"]
    gamma = par["gamma"]
    theta = par["theta0"]
    y_paths = np.empty((n_draws, t_len))
    i_paths = np.empty((n_draws, t_len))
    for t in range(t_len):
        mean = _rk4_batch(theta, beta, gamma, substeps)
        theta = sample_dirichlet(rng, kappa[:, None] * mean)
        i = np.clip(theta[:, 1], 0.0, 1.0)
        i_paths[:, t] = i
        y_paths[:, t] = _beta_obs(rng, lam, np.clip(i, np.finfo(float).tiny, 1 - 1e-16))
    days = np.arange(1, t_len + 1)
    return _summaries(days, y_paths, i_paths, None, keep_paths)


def posterior_forecast(
    draws: PosteriorDraws,
    scenario: ScenarioSpec,
    rng: np.random.Generator,
    n_draws: int | None = None,
    kappa_override: float | None = None,
    lambda_override: float | None = None,
    keep_paths: bool = False,
) -> Forecast:
    """Forecast future observations from each retained posterior draw.

    Each draw continues from its own latent state on the last observed day;
    forecast day k uses infection rate c*beta while k <= t_star and
    c_star*beta afterwards (the removal rate is unchanged).
    """
    if len(draws) == 0:
        raise ValueError("no posterior draws to forecast from")
    n = len(draws) if n_draws is None else min(n_draws, len(draws))
    theta = draws.final_theta[:n].copy()
    beta = draws.beta[:n]
    gamma = draws.gamma[:n]
    kappa = np.full(n, kappa_override) if kappa_override is not None else draws.kappa[:n]
    lam = np.full(n, lambda_override) if lambda_override is not None else draws.lam[:n]
    t_obs = draws.t_len
    h = scenario.horizon
    y_paths = np.empty((n, h))
    i_paths = np.empty((n, h))
    for k in range(1, h + 1):
        mult = scenario.c if k <= scenario.t_star else scenario.c_star
        mean = _rk4_batch(theta, mult * beta, gamma, draws.substeps)
        theta = sample_dirichlet(rng, kappa[:, None] * mean)
        i = np.clip(theta[:, 1], 0.0, 1.0)
        i_paths[:, k - 1] = i
        y_paths[:, k - 1] = _beta_obs(rng, lam, np.clip(i, np.finfo(float).tiny, 1 - 1e-16))
    days = np.arange(t_obs + 1, t_obs + h + 1)
    return _summaries(days, y_paths, i_paths, scenario, keep_paths)


def scenario_sweep(
    draws: PosteriorDraws,
    scenarios: list[ScenarioSpec],
    stream: RngStream,
    n_draws: int | None = None,
) -> list[Forecast]:
    """Run posterior_forecast per scenario, each on its own derived substream."""
    if not scenarios:
        raise ValueError("scenario list is empty")
    out = []
    for k, scenario in enumerate(scenarios):
        rng = stream.substream(k).generator()
        out.append(posterior_forecast(draws, scenario, rng, n_draws=n_draws))
    return out


def forecast_frame(fc: Forecast) -> pd.DataFrame:
    """Tabular view of a forecast: one row per day with bands for y and i."""
    data = {
        "day": fc.days,
        "date": [day_to_date(float(d)).isoformat() for d in fc.days],
        "median": fc.y_quantiles[0.5],
        "q025": fc.y_quantiles[0.025],
        "q975": fc.y_quantiles[0.975],
        "q95_upper": fc.y_upper95,
        "i_median": fc.i_quantiles[0.5],
        "i_q025": fc.i_quantiles[0.025],
        "i_q975": fc.i_quantiles[0.975],
        "i_q95_upper": fc.i_upper95,
    }
    frame = pd.DataFrame(data)
    if fc.scenario is not None:
        frame.insert(0, "c", fc.scenario.c)
        frame.insert(1, "c_star", fc.scenario.c_star)
        frame.insert(2, "t_star", fc.scenario.t_star)
    return frame


def save_peaks(fc: Forecast, path) -> None:
    Path(path).write_text(json.dumps(fc.peak_summary(), indent=2))
