//! EGARCH(1,1) with Gaussian innovations and optional exogenous regressors
//! in the log-variance equation:
//!
//! ```text
//! r_t          = mu + eps_t,        eps_t = sigma_t * eta_t
//! ln sigma_t^2 = omega0 + omega * eta_{t-1} + gamma * |eta_{t-1}|
//!                + tau * ln sigma_{t-1}^2 + sum_l lambda_l * x_{l,t}
//! ```
//!
//! `|eta|` enters uncentered, so `omega0` absorbs `gamma * E|eta|`. The
//! recursion starts from a pre-sample `sigma^2` equal to the sample variance
//! of the returns and a pre-sample `eta` of zero.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::spd_inverse;
use crate::optim::{numerical_hessian, Bfgs, NelderMead};
use crate::timeseries::mean_sd;

pub const MIN_OBSERVATIONS: usize = 30;
/// Bound on |tau| enforced by the optimizer's reparametrisation.
pub const TAU_BOUND: f64 = 0.999;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const CORE_PARAMS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolatilityError {
    #[error("need at least {MIN_OBSERVATIONS} returns, got {0}")]
    TooShort(usize),
    #[error("covariate {index} has {got} rows, expected {expected}")]
    CovariateShape {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("expected {expected} covariate coefficients, got {got}")]
    ParameterShape { expected: usize, got: usize },
    #[error("variance recursion left the finite range at t={0}")]
    NonFinite(usize),
    #[error("non-finite input at t={0}")]
    NonFiniteInput(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EgarchParams {
    pub mu: f64,
    pub omega0: f64,
    /// Sign (asymmetry) coefficient on `eta_{t-1}`.
    pub omega: f64,
    /// Magnitude coefficient on `|eta_{t-1}|`.
    pub gamma: f64,
    /// Log-variance persistence.
    pub tau: f64,
    pub lambda: Vec<f64>,
}

impl EgarchParams {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.mu, self.omega0, self.omega, self.gamma, self.tau];
        v.extend(&self.lambda);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            mu: v[0],
            omega0: v[1],
            omega: v[2],
            gamma: v[3],
            tau: v[4],
            lambda: v[CORE_PARAMS..].to_vec(),
        }
    }

    pub fn names(covariates: &[String]) -> Vec<String> {
        let mut n: Vec<String> = ["mu", "omega0", "omega", "gamma", "tau"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        n.extend(covariates.iter().cloned());
        n
    }
}

/// Model description: the names of the exogenous regressors, in column
/// order. The empty list is the covariate-free model.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EgarchSpec {
    pub covariates: Vec<String>,
}

impl EgarchSpec {
    pub fn parameter_count(&self) -> usize {
        CORE_PARAMS + self.covariates.len()
    }
}

fn check_inputs(returns: &[f64], covariates: &[Vec<f64>]) -> Result<(), VolatilityError> {
    if returns.len() < MIN_OBSERVATIONS {
        return Err(VolatilityError::TooShort(returns.len()));
    }
    if let Some(t) = returns.iter().position(|r| !r.is_finite()) {
        return Err(VolatilityError::NonFiniteInput(t));
    }
    for (index, c) in covariates.iter().enumerate() {
        if c.len() != returns.len() {
            return Err(VolatilityError::CovariateShape {
                index,
                got: c.len(),
                expected: returns.len(),
            });
        }
        if let Some(t) = c.iter().position(|v| !v.is_finite()) {
            return Err(VolatilityError::NonFiniteInput(t));
        }
    }
    Ok(())
}

fn initial_log_variance(returns: &[f64]) -> f64 {
    let (_, sd) = mean_sd(returns);
    (sd * sd).max(f64::MIN_POSITIVE).ln()
}

/// Gaussian log-likelihood and the fitted conditional variances.
pub fn egarch_loglik(
    params: &EgarchParams,
    returns: &[f64],
    covariates: &[Vec<f64>],
) -> Result<(f64, Vec<f64>), VolatilityError> {
    check_inputs(returns, covariates)?;
    if params.lambda.len() != covariates.len() {
        return Err(VolatilityError::ParameterShape {
            expected: covariates.len(),
            got: params.lambda.len(),
        });
    }
    let mut sigma2 = Vec::with_capacity(returns.len());
    let ll = recursion(params, returns, covariates, initial_log_variance(returns), |s2| {
        sigma2.push(s2)
    })?;
    Ok((ll, sigma2))
}

fn recursion(
    p: &EgarchParams,
    returns: &[f64],
    covariates: &[Vec<f64>],
    log_var0: f64,
    mut sink: impl FnMut(f64),
) -> Result<f64, VolatilityError> {
    let mut log_var = log_var0;
    let mut eta = 0.0;
    let mut ll = 0.0;
    for (t, &r) in returns.iter().enumerate() {
        let mut lv = p.omega0 + p.omega * eta + p.gamma * eta.abs() + p.tau * log_var;
        for (l, x) in p.lambda.iter().zip(covariates) {
            lv += l * x[t];
        }
        if !lv.is_finite() || lv.abs() > 700.0 {
            return Err(VolatilityError::NonFinite(t));
        }
        let s2 = lv.exp();
        let e = r - p.mu;
        eta = e / s2.sqrt();
        ll -= 0.5 * (LN_2PI + lv + e * e / s2);
        log_var = lv;
        sink(s2);
    }
    Ok(ll)
}

#[derive(Debug, Clone, Serialize)]
pub struct EgarchFit {
    pub spec: EgarchSpec,
    pub params: EgarchParams,
    /// Standard errors from the inverse numerical Hessian in parameter
    /// order; `None` when the Hessian is not positive definite.
    pub std_errors: Option<Vec<f64>>,
    pub loglik: f64,
    pub aic_norm: f64,
    pub bic_norm: f64,
    pub sigma2: Vec<f64>,
    pub n: usize,
    pub converged: bool,
}

impl EgarchFit {
    pub fn t_values(&self) -> Option<Vec<f64>> {
        let se = self.std_errors.as_ref()?;
        Some(
            self.params
                .to_vec()
                .iter()
                .zip(se)
                .map(|(c, s)| c / s)
                .collect(),
        )
    }
}

/// Extra optimizer start points (in parameter order) tried in addition to
/// the default ones.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub extra_starts: Vec<Vec<f64>>,
}

fn to_internal(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u[4] = (v[4] / TAU_BOUND).clamp(-0.999_999, 0.999_999).atanh();
    u
}

fn to_natural(u: &[f64]) -> Vec<f64> {
    let mut v = u.to_vec();
    v[4] = TAU_BOUND * u[4].tanh();
    v
}

pub fn default_starts(returns: &[f64], m: usize) -> Vec<Vec<f64>> {
    let (mean, _) = mean_sd(returns);
    let lv = initial_log_variance(returns);
    let e_abs = (2.0 / std::f64::consts::PI).sqrt();
    let mut documented = vec![mean, lv, 0.0, 0.1, 0.9];
    documented.extend(std::iter::repeat_n(0.0, m));
    // Same shape, with omega0 set so the implied stationary log-variance
    // equals the sample log-variance.
    let mut level = documented.clone();
    level[1] = (1.0 - 0.9) * lv - 0.1 * e_abs;
    vec![documented, level]
}

/// Maximum likelihood fit.
pub fn fit_egarch(
    spec: &EgarchSpec,
    returns: &[f64],
    covariates: &[Vec<f64>],
    options: &FitOptions,
) -> Result<EgarchFit, VolatilityError> {
    check_inputs(returns, covariates)?;
    let m = covariates.len();
    if spec.covariates.len() != m {
        return Err(VolatilityError::ParameterShape {
            expected: spec.covariates.len(),
            got: m,
        });
    }
    let lv0 = initial_log_variance(returns);
    let negll_natural = |v: &[f64]| -> f64 {
        let p = EgarchParams::from_slice(v);
        match recursion(&p, returns, covariates, lv0, |_| {}) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };
    let negll = |u: &[f64]| negll_natural(&to_natural(u));

    let mut starts = default_starts(returns, m);
    starts.extend(
        options
            .extra_starts
            .iter()
            .filter(|s| s.len() == CORE_PARAMS + m)
            .cloned(),
    );

    let bfgs = Bfgs::default();
    let nm = NelderMead {
        max_iter: 4000 * (CORE_PARAMS + m),
        f_tol: 1e-12,
        step: 0.05,
    };
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in &starts {
        let u0 = to_internal(s);
        let f0 = negll(&u0);
        let a = bfgs.minimize(negll, &u0);
        let b = nm.minimize(negll, &a.x);
        let c = bfgs.minimize(negll, &b.x);
        let mut cand = vec![(u0, f0, false), (a.x, a.value, a.converged), (b.x, b.value, false)];
        cand.push((c.x, c.value, c.converged || (b.converged && (b.value - c.value).abs() < 1e-8)));
        for (x, v, conv) in cand {
            if v.is_finite() && best.as_ref().is_none_or(|bst| v < bst.1) {
                best = Some((x, v, conv));
            }
        }
    }
    let (u, value, converged) = best.ok_or(VolatilityError::NonFinite(0))?;
    let theta = to_natural(&u);
    let params = EgarchParams::from_slice(&theta);
    let (loglik, sigma2) = egarch_loglik(&params, returns, covariates)?;
    debug_assert!((loglik + value).abs() < 1e-9 * (1.0 + value.abs()));

    let hess = numerical_hessian(&negll_natural, &theta);
    let std_errors = spd_inverse(&hess).and_then(|inv| {
        let se: Vec<f64> = (0..inv.len()).map(|i| inv[i][i].sqrt()).collect();
        se.iter().all(|s| s.is_finite() && *s > 0.0).then_some(se)
    });

    let n = returns.len() as f64;
    let k = spec.parameter_count() as f64;
    Ok(EgarchFit {
        spec: spec.clone(),
        params,
        std_errors,
        loglik,
        aic_norm: (-2.0 * loglik + 2.0 * k) / n,
        bic_norm: (-2.0 * loglik + k * n.ln()) / n,
        sigma2,
        n: returns.len(),
        converged,
    })
}

/// Fits the covariate-free model, then the model with `covariates`, warm
/// starting the latter from the former with zero loadings.
pub fn fit_nested(
    returns: &[f64],
    names: &[String],
    covariates: &[Vec<f64>],
) -> Result<(EgarchFit, EgarchFit), VolatilityError> {
    let fit0 = fit_egarch(&EgarchSpec::default(), returns, &[], &FitOptions::default())?;
    let mut warm = fit0.params.to_vec();
    warm.extend(std::iter::repeat_n(0.0, covariates.len()));
    let fitx = fit_egarch(
        &EgarchSpec {
            covariates: names.to_vec(),
        },
        returns,
        covariates,
        &FitOptions {
            extra_starts: vec![warm],
        },
    )?;
    Ok((fit0, fitx))
}

/// One parameter row of the model comparison: (coefficient, t-value).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub parameter: String,
    pub model0: Option<(f64, Option<f64>)>,
    pub model_x: Option<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelComparison {
    pub rows: Vec<ComparisonRow>,
    pub loglik: (f64, f64),
    pub aic_norm: (f64, f64),
    pub bic_norm: (f64, f64),
    /// (|r_t|, sigma_t under model 0, sigma_t under model X).
    pub overlay: Vec<(f64, f64, f64)>,
}

/// Side-by-side coefficients, t-values and information criteria.
pub fn compare_models(fit0: &EgarchFit, fitx: &EgarchFit, returns: &[f64]) -> ModelComparison {
    let names = EgarchParams::names(&fitx.spec.covariates);
    let v0 = fit0.params.to_vec();
    let vx = fitx.params.to_vec();
    let t0 = fit0.t_values();
    let tx = fitx.t_values();
    let rows = names
        .into_iter()
        .enumerate()
        .map(|(i, parameter)| ComparisonRow {
            parameter,
            model0: v0
                .get(i)
                .map(|c| (*c, t0.as_ref().map(|t| t[i]))),
            model_x: Some((vx[i], tx.as_ref().map(|t| t[i]))),
        })
        .collect();
    let overlay = returns
        .iter()
        .zip(fit0.sigma2.iter().zip(&fitx.sigma2))
        .map(|(r, (a, b))| (r.abs(), a.sqrt(), b.sqrt()))
        .collect();
    ModelComparison {
        rows,
        loglik: (fit0.loglik, fitx.loglik),
        aic_norm: (fit0.aic_norm, fitx.aic_norm),
        bic_norm: (fit0.bic_norm, fitx.bic_norm),
        overlay,
    }
}

/// Draws `n` returns from the model after `burn_in` discarded steps.
/// `covariates` (if any) must have `n` rows and apply to the kept steps.
pub fn simulate(
    params: &EgarchParams,
    n: usize,
    burn_in: usize,
    covariates: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Vec<f64> {
    let e_abs = (2.0 / std::f64::consts::PI).sqrt();
    let mut log_var = if params.tau.abs() < 1.0 {
        (params.omega0 + params.gamma * e_abs) / (1.0 - params.tau)
    } else {
        params.omega0
    };
    let mut eta = 0.0;
    let mut out = Vec::with_capacity(n);
    for t in 0..burn_in + n {
        let mut lv = params.omega0 + params.omega * eta + params.gamma * eta.abs() + params.tau * log_var;
        if t >= burn_in {
            for (l, x) in params.lambda.iter().zip(covariates) {
                lv += l * x[t - burn_in];
            }
        }
        eta = rng.sample(StandardNormal);
        log_var = lv;
        if t >= burn_in {
            out.push(params.mu + (lv / 2.0).exp() * eta);
        }
    }
    out
}
