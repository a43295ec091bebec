"""Posterior summaries, predictions, shrinkage diagnostics, and the
quadrature checker for the shrinkage-factor concentration rates.

All operations are pure over immutable traces. Empirical quantiles use
numpy's inclusive linear-interpolation rule so credible intervals are
bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtri

from .data import PanelDataset
from .design import ModelSpec, build_matrices
from .errors import NumericalError, SpecMismatchError, ValidationError
from .gibbs import PriorConfig, nu_log_prior
from .kernels import RngStream

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8

PREDICT_STREAM_BASE = 10 ** 6


# ---------------------------------------------------------------------------
# summaries

@dataclass(frozen=True)
class SummaryRow:
    param: str
    index: int
    mean: float
    sd: float
    q2_5: float
    q50: float
    q97_5: float
    ess: float
    rhat: float


@dataclass(frozen=True)
class PosteriorSummary:
    rows: tuple

    def lookup(self, param: str, index: int = 0) -> SummaryRow:
        for row in self.rows:
            if row.param == param and row.index == index:
                return row
        raise KeyError((param, index))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of one chain via FFT."""
    n = len(x)
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real / n
    return acov


def effective_sample_size(chains: np.ndarray) -> float:
    """ESS across chains (C, K) using Geyer's initial monotone sequence."""
    chains = np.atleast_2d(chains)
    c, k = chains.shape
    if k < 4:
        return float(c * k)
    acov = np.stack([_autocovariance(ch) for ch in chains])
    chain_var = acov[:, 0] * k / (k - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (k - 1.0) / k
    if c > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    if var_plus == 0.0:
        return float(c * k)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    # Geyer: accumulate consecutive pairs while positive, then enforce
    # monotone decrease of the pair sums
    pair_sums = []
    t = 1
    while t + 1 < k:
        pair = rho[t] + rho[t + 1]
        if pair < 0.0:
            break
        pair_sums.append(pair)
        t += 2
    mono = np.minimum.accumulate(pair_sums) if pair_sums else np.zeros(0)
    tau_hat = -1.0 + 2.0 * rho[0] + 2.0 * float(np.sum(mono))
    tau_hat = max(tau_hat, 1.0 / math.log10(c * k + 10))
    return float(min(c * k / tau_hat, c * k * math.log10(c * k + 10)))


def split_rhat(chains: np.ndarray) -> float:
    """Rank-normalized split R-hat; 1.0 for constant draws."""
    chains = np.atleast_2d(chains)
    c, k = chains.shape
    if k < 4:
        return 1.0
    half = k // 2
    split = np.concatenate([chains[:, :half], chains[:, half:2 * half]], axis=0)
    if np.allclose(split, split.ravel()[0], rtol=0.0, atol=0.0):
        return 1.0
    flat = split.ravel()
    ranks = np.argsort(np.argsort(flat, kind="stable"), kind="stable") + 1.0
    z = ndtri((ranks - 0.375) / (flat.size + 0.25)).reshape(split.shape)
    c2, k2 = z.shape
    w = z.var(axis=1, ddof=1).mean()
    b = k2 * z.mean(axis=1).var(ddof=1)
    if w == 0.0:
        return 1.0
    var_plus = (k2 - 1.0) / k2 * w + b / k2
    return float(math.sqrt(var_plus / w))


def _param_display_name(key: str, priors: PriorConfig) -> str:
    if key == "tau":
        return priors.tau_name
    if key == "phi":
        return priors.phi_name
    return key


def summarize(traces) -> PosteriorSummary:
    """Pooled means, sds, quantiles plus per-parameter ESS and split R-hat."""
    if not traces:
        raise ValidationError("summarize needs at least one trace")
    kept = {t.kept for t in traces}
    if len(kept) != 1:
        raise ValidationError(f"traces have unequal kept-draw counts: {sorted(kept)}")
    priors = traces[0].priors
    rows = []
    for key in traces[0].draws:
        stacked = np.stack([np.atleast_2d(t.draws[key].T).T.astype(np.float64)
                            for t in traces])  # (C, K, dim) or (C, K)
        if stacked.ndim == 2:
            stacked = stacked[:, :, None]
        name = _param_display_name(key, priors)
        for j in range(stacked.shape[2]):
            chains = stacked[:, :, j]
            pooled = chains.ravel()
            q = np.quantile(pooled, [0.025, 0.5, 0.975], method="linear")
            rows.append(SummaryRow(
                param=name, index=j,
                mean=float(pooled.mean()), sd=float(pooled.std(ddof=1) if pooled.size > 1 else 0.0),
                q2_5=float(q[0]), q50=float(q[1]), q97_5=float(q[2]),
                ess=effective_sample_size(chains), rhat=split_rhat(chains),
            ))
    return PosteriorSummary(rows=tuple(rows))


# ---------------------------------------------------------------------------
# fitted and predictive completeness

def _inv_logit_arr(theta: np.ndarray) -> np.ndarray:
    out = np.empty_like(theta)
    pos = theta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-theta[pos]))
    e = np.exp(theta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_spec(traces, spec: ModelSpec) -> None:
    for t in traces:
        if t.spec != spec:
            raise SpecMismatchError(
                f"trace was fitted with spec {t.spec}, data built with {spec}")


@dataclass(frozen=True)
class FittedCompleteness:
    """Per-observation posterior summaries of completeness, with and
    without the unit random effect."""
    mean: np.ndarray        # (n,) posterior mean of inv_logit(x'b + u)
    q2_5: np.ndarray
    q97_5: np.ndarray
    mean_minus_u: np.ndarray  # (n,) fixed-effect-only stream for R-square


def fitted_completeness(traces, panel: PanelDataset, spec: ModelSpec) -> FittedCompleteness:
    _check_spec(traces, spec)
    design = build_matrices(panel, spec, for_fit=False)
    if traces[0].unit_ids != design.unit_ids:
        raise SpecMismatchError("panel unit ids differ from the fitted ones")
    beta = np.concatenate([t.draws["beta"] for t in traces])   # (K, p)
    u = np.concatenate([t.draws["u"] for t in traces])         # (K, m)
    theta_fixed = beta @ design.X.T                            # (K, n)
    theta = theta_fixed + u[:, design.group_idx]
    delta = _inv_logit_arr(theta)
    q = np.quantile(delta, [0.025, 0.975], axis=0, method="linear")
    return FittedCompleteness(
        mean=delta.mean(axis=0), q2_5=q[0], q97_5=q[1],
        mean_minus_u=_inv_logit_arr(theta_fixed).mean(axis=0),
    )


@dataclass(frozen=True)
class PredictionResult:
    unit_id: str
    mode: str
    mean: np.ndarray    # (r,) per design row
    q2_5: np.ndarray
    q97_5: np.ndarray


def _draw_omega_prior(rng, priors: PriorConfig, size: int) -> np.ndarray:
    """Local random-effect precisions from the configured prior family."""
    if priors.reffect_prior == "horseshoe":
        x = rng.beta(0.5, 0.5, size=size)
        return x / (1.0 - x)
    if priors.reffect_prior == "laplace":
        return 1.0 / rng.exponential(1.0, size=size)
    if priors.reffect_prior == "student-t":
        logw = nu_log_prior(priors)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        nu = np.asarray(priors.nu_support, dtype=np.float64)[
            rng.choice(len(w), size=size, p=w)]
        return rng.standard_gamma(nu / 2.0) / (nu / 2.0)
    return np.ones(size)


def predict_new_unit(traces, rows: np.ndarray, mode: str = "integrate_reffect",
                     unit_id: str = "new_unit") -> PredictionResult:
    """Posterior predictive completeness for a new unit's design rows.

    fixed_only uses x'beta per draw; integrate_reffect additionally
    samples a fresh random effect u* ~ N(0, 1/(omega* phi)) with omega*
    from the configured local prior. One u* per posterior draw, shared
    across the unit's rows. Uses the dedicated prediction streams
    (stream_id = 1e6 + chain_id) so fits stay reproducible.
    """
    if mode not in ("fixed_only", "integrate_reffect"):
        raise ValidationError(f"unknown prediction mode {mode!r}")
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    p = traces[0].draws["beta"].shape[1]
    if rows.shape[1] != p:
        raise SpecMismatchError(f"design rows have {rows.shape[1]} columns, fit expects {p}")
    thetas = []
    for t in traces:
        beta = t.draws["beta"]
        theta = beta @ rows.T                                    # (K, r)
        if mode == "integrate_reffect":
            rng = RngStream(t.seed, PREDICT_STREAM_BASE + t.chain_id).generator()
            omega = _draw_omega_prior(rng, t.priors, beta.shape[0])
            u_star = rng.standard_normal(beta.shape[0]) / np.sqrt(omega * t.draws["phi"])
            theta = theta + u_star[:, None]
        thetas.append(theta)
    theta = np.concatenate(thetas)
    delta = _inv_logit_arr(theta)
    q = np.quantile(delta, [0.025, 0.975], axis=0, method="linear")
    return PredictionResult(unit_id=unit_id, mode=mode,
                            mean=delta.mean(axis=0), q2_5=q[0], q97_5=q[1])


# ---------------------------------------------------------------------------
# shrinkage factors and deviances

def shrinkage_factors(traces, sizes=None):
    """Per-group shrinkage factor draws gamma_i = lam_i tau / (lam_i tau
    + omega_i phi / n_i); returns (draws (K, m), means (m,))."""
    if sizes is None:
        sizes = traces[0].sizes
    n_i = np.asarray(sizes, dtype=np.float64)
    parts = []
    for t in traces:
        lt = t.draws["lambda"] * t.draws["tau"][:, None]
        of = t.draws["omega"] * t.draws["phi"][:, None]
        parts.append(lt / (lt + of / n_i))
    draws = np.concatenate(parts)
    return draws, draws.mean(axis=0)


def deviances(panel: PanelDataset, spec: ModelSpec):
    """Per-group (country-level, country-year-level) deviances around the
    pooled OLS fit: (ybar_i - xbar_i' b)^2 and sum_j (y_ij - x_ij' b)^2 / n_i."""
    design = build_matrices(panel, spec, for_fit=False)
    xtx = design.X.T @ design.X
    svals = np.linalg.svd(xtx, compute_uv=False)
    if svals[0] <= 0 or svals[-1] / svals[0] < 1e-12:
        raise ValidationError("pooled design is rank deficient; OLS deviances undefined")
    beta_hat = np.linalg.solve(xtx, design.X.T @ design.y)
    country = (design.ybar - design.xbar @ beta_hat) ** 2
    r = design.y - design.X @ beta_hat
    country_year = np.bincount(design.group_idx, weights=r * r,
                               minlength=design.m) / design.sizes
    return country, country_year


# ---------------------------------------------------------------------------
# concentration-rate curves for the shrinkage factor

def _log_prior_omega(prior: str, w: np.ndarray, nu: float = 5.0) -> np.ndarray:
    if prior == "horseshoe":
        return -0.5 * np.log(w) - np.log1p(w)
    if prior == "laplace":
        return -2.0 * np.log(w) - 1.0 / w
    if prior == "student-t":
        return (nu / 2.0 - 1.0) * np.log(w) - nu * w / 2.0
    if prior == "half-cauchy":
        return -2.0 * np.log1p(w)
    raise ValidationError(f"unsupported local prior {prior!r} for the rate checker")


def _marginal_loglik(obs_var: float, reff_var: float, n_i: int,
                     resid_mean: float, resid_ss: float) -> float:
    """Log density (up to a constant) of an n_i-vector of residuals under
    covariance obs_var I + reff_var J (compound symmetry)."""
    a, v = obs_var, reff_var
    logdet = (n_i - 1.0) * math.log(a) + math.log(a + n_i * v)
    quad_form = resid_ss / a - v * (n_i * resid_mean) ** 2 / (a * (a + n_i * v))
    return -0.5 * (logdet + quad_form)


def _tail_prob(log_f, log_cut: float) -> float:
    """P(X < cut) for the density exp(log_f(log x)) dx, by quadrature on
    the log axis with peak normalization."""
    # finite window around the cut: the local priors all decay at least
    # exponentially on the log axis, so +/-200 log units lose nothing at
    # double precision, and finite bounds keep exp() in range. Each side
    # is normalized by its own peak so deep-tail probabilities stay
    # accurate in log space.
    lo = log_cut - 200.0
    hi = max(log_cut, 10.0) + 200.0

    def piece(a, b):
        grid = np.linspace(a, b, 400)
        exponents = np.array([log_f(t) + t for t in grid])
        mscale = exponents.max()
        if not np.isfinite(mscale):
            raise NumericalError("rate-curve integrand is non-finite on the scan grid")

        def g(t):
            return math.exp(min(log_f(t) + t - mscale, 0.0))

        val, _ = quad(g, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                      limit=300, points=grid[np.argsort(exponents)[-4:]])
        if val <= 0.0:
            return -np.inf
        return math.log(val) + mscale

    log_num = piece(lo, log_cut)
    log_den_tail = piece(log_cut, hi)
    log_den = np.logaddexp(log_num, log_den_tail)
    if not np.isfinite(log_den):
        raise NumericalError("rate-curve denominator quadrature failed")
    return float(min(max(math.exp(log_num - log_den), 0.0), 1.0))


def theorem2_curve(prior: str, eps: float, *, n_i: int, resid_mean: float,
                   resid_ss: float = None, lam_tau: float = 1.0,
                   omega_phi: float = 1.0, phi_grid=None, tau_grid=None,
                   nu: float = 5.0) -> np.ndarray:
    """Concentration curve of the shrinkage factor.

    With `phi_grid`: P(gamma > eps | .) as a function of phi, integrating
    the local effect scale omega against the group marginal likelihood
    (errors fixed at precision lam_tau). With `tau_grid`: P(gamma < eps | .)
    as a function of tau, integrating the local error scale lambda
    (effects fixed at precision omega_phi). Exactly one grid must be given.
    """
    if not (0.0 < eps < 1.0):
        raise ValidationError(f"eps must lie in (0,1), got {eps}")
    if (phi_grid is None) == (tau_grid is None):
        raise ValidationError("provide exactly one of phi_grid / tau_grid")
    if resid_ss is None:
        resid_ss = n_i * resid_mean ** 2
    out = []
    if phi_grid is not None:
        # gamma > eps  <=>  omega < n_i lam_tau (1-eps) / (eps phi)
        c = n_i * lam_tau * (1.0 - eps) / eps
        for phi in np.asarray(phi_grid, dtype=np.float64):
            def log_f(t, phi=phi):
                # clamp so exp() stays finite; the clipped tails contribute
                # nothing at double precision
                w = math.exp(min(max(t, -600.0), 600.0))
                ll = _marginal_loglik(1.0 / lam_tau, 1.0 / (w * phi), n_i,
                                      resid_mean, resid_ss)
                return ll + float(_log_prior_omega(prior, np.asarray(w), nu))
            try:
                out.append(_tail_prob(log_f, math.log(c / phi)))
            except NumericalError as exc:
                raise NumericalError(f"quadrature failed at phi = {phi:g}: {exc}") from exc
    else:
        # gamma < eps  <=>  lambda < eps omega_phi / ((1-eps) n_i tau)
        c = eps * omega_phi / ((1.0 - eps) * n_i)
        for tau in np.asarray(tau_grid, dtype=np.float64):
            def log_f(t, tau=tau):
                lam = math.exp(min(max(t, -600.0), 600.0))
                ll = _marginal_loglik(1.0 / (lam * tau), 1.0 / omega_phi, n_i,
                                      resid_mean, resid_ss)
                return ll + float(_log_prior_omega(prior, np.asarray(lam)))
            try:
                out.append(_tail_prob(log_f, math.log(c / tau)))
            except NumericalError as exc:
                raise NumericalError(f"quadrature failed at tau = {tau:g}: {exc}") from exc
    return np.asarray(out)
