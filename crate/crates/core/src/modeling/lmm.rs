//! Random-intercept linear mixed model, fitted by maximum likelihood.
//!
//! y = Xb + Zu + e with u ~ N(0, tau2 I) and e ~ N(0, sigma2 I). With
//! lambda = tau2 / sigma2 the marginal covariance is sigma2 H where
//! H = I + lambda Z Z'. H is block diagonal with one block per group, so
//! H^-1 = I - c_g 11' and log|H| = sum_g ln(1 + lambda n_g), where
//! c_g = lambda / (1 + lambda n_g). b and sigma2 are profiled out and the
//! profile log-likelihood is maximised over lambda alone.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::design::Grouping;
use super::ModelError;

/// Upper end of the variance-ratio search.
pub const LAMBDA_MAX: f64 = 1e4;
const LAMBDA_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub term_names: Vec<String>,
    pub betas: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub coef_p: Vec<f64>,
    pub tau2: f64,
    pub sigma2: f64,
    pub lambda: f64,
    pub group_levels: Vec<String>,
    /// Predicted random intercept per level, aligned with `group_levels`.
    pub group_intercepts: Vec<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub n: usize,
    /// Parameters counted in the BIC.
    pub n_params: usize,
    /// Whether a random intercept was estimated (needs at least two levels).
    pub random: bool,
    /// False when the optimum sits on the upper search bound.
    pub converged: bool,
}

impl FitResult {
    pub fn random_intercept(&self, level: &str) -> Option<f64> {
        self.group_levels.iter().position(|l| l == level).map(|i| self.group_intercepts[i])
    }
}

/// Sufficient statistics for the profile likelihood.
struct Profile<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    index: &'a [usize],
    sizes: Vec<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    /// Column sums of X within each group.
    xsum: Vec<DVector<f64>>,
    ysum: Vec<f64>,
}

struct Evaluation {
    beta: DVector<f64>,
    sigma2: f64,
    loglik: f64,
    /// X' H^-1 X
    info: DMatrix<f64>,
    residual_sums: Vec<f64>,
}

impl<'a> Profile<'a> {
    fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>, index: &'a [usize], n_levels: usize) -> Self {
        let p = x.ncols();
        let mut sizes = vec![0.0; n_levels];
        let mut xsum = vec![DVector::zeros(p); n_levels];
        let mut ysum = vec![0.0; n_levels];
        for (r, &g) in index.iter().enumerate() {
            sizes[g] += 1.0;
            xsum[g] += x.row(r).transpose();
            ysum[g] += y[r];
        }
        Self {
            x,
            y,
            index,
            sizes,
            xtx: x.tr_mul(x),
            xty: x.tr_mul(y),
            xsum,
            ysum,
        }
    }

    fn evaluate(&self, lambda: f64) -> Result<Evaluation, ModelError> {
        let n = self.y.len() as f64;
        let mut info = self.xtx.clone();
        let mut rhs = self.xty.clone();
        let mut logdet = 0.0;
        let c: Vec<f64> = self.sizes.iter().map(|&ng| lambda / (1.0 + lambda * ng)).collect();
        for (g, &cg) in c.iter().enumerate() {
            if cg != 0.0 {
                info.ger(-cg, &self.xsum[g], &self.xsum[g], 1.0);
                rhs.axpy(-cg * self.ysum[g], &self.xsum[g], 1.0);
            }
            logdet += (lambda * self.sizes[g]).ln_1p();
        }
        let beta = info.clone().cholesky().ok_or(ModelError::RankDeficient)?.solve(&rhs);
        let resid = self.y - self.x * &beta;
        let mut residual_sums = vec![0.0; self.sizes.len()];
        for (r, &g) in self.index.iter().enumerate() {
            residual_sums[g] += resid[r];
        }
        let quad = resid.norm_squared()
            - c.iter().zip(&residual_sums).map(|(cg, s)| cg * s * s).sum::<f64>();
        let sigma2 = quad / n;
        if !(sigma2 > 0.0) {
            return Err(ModelError::PerfectFit);
        }
        let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + 1.0 + sigma2.ln()) - 0.5 * logdet;
        Ok(Evaluation {
            beta,
            sigma2,
            loglik,
            info,
            residual_sums,
        })
    }
}

/// Maximises the profile log-likelihood over lambda in [0, LAMBDA_MAX]:
/// a log-spaced grid locates the peak, golden-section search refines it, and
/// the lambda = 0 boundary is always compared explicitly.
fn maximise(profile: &Profile<'_>) -> Result<(f64, Evaluation), ModelError> {
    let mut grid = vec![0.0];
    grid.extend((0..=120).map(|i| 10f64.powf(-8.0 + 12.0 * i as f64 / 120.0)));
    let mut lls = Vec::with_capacity(grid.len());
    for &l in &grid {
        lls.push(profile.evaluate(l)?.loglik);
    }
    let best = (0..grid.len()).fold(0, |b, i| if lls[i] > lls[b] { i } else { b });
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];

    let f = |l: f64| profile.evaluate(l).map(|e| e.loglik);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..300 {
        if b - a <= LAMBDA_TOL * (1.0 + a) {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2)?;
        }
    }
    let mut lambda = if f1 >= f2 { x1 } else { x2 };
    let mut eval = profile.evaluate(lambda)?;
    for candidate in [grid[best], 0.0] {
        let e = profile.evaluate(candidate)?;
        if e.loglik > eval.loglik {
            lambda = candidate;
            eval = e;
        }
    }
    Ok((lambda, eval))
}

fn wald_p(beta: &DVector<f64>, se: &[f64]) -> Vec<f64> {
    let normal = Normal::standard();
    beta.iter()
        .zip(se)
        .map(|(b, s)| {
            if *s > 0.0 {
                2.0 * normal.sf((b / s).abs())
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Fits y ~ X b (+ random intercept per group). With fewer than two group
/// levels, or no grouping, this is ordinary least squares by ML.
pub fn fit_lmm(
    x: &DMatrix<f64>,
    groups: Option<&Grouping>,
    y: &DVector<f64>,
    term_names: &[String],
) -> Result<FitResult, ModelError> {
    let (n, p) = x.shape();
    if y.len() != n || term_names.len() != p {
        return Err(ModelError::Shape);
    }
    if n <= p + 1 {
        return Err(ModelError::TooFewRows { n, p });
    }
    let random = groups.is_some_and(|g| g.n_levels() >= 2);
    let single = vec![0usize; n];
    let (index, levels): (&[usize], Vec<String>) = match groups {
        Some(g) if random => (&g.index, g.levels.clone()),
        _ => (&single, Vec::new()),
    };
    let profile = Profile::new(x, y, index, levels.len().max(1));
    let (lambda, eval) = if random { maximise(&profile)? } else { (0.0, profile.evaluate(0.0)?) };

    let cov = eval.info.clone().try_inverse().ok_or(ModelError::RankDeficient)? * eval.sigma2;
    let std_errors: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let coef_p = wald_p(&eval.beta, &std_errors);
    let group_intercepts = if random {
        profile
            .sizes
            .iter()
            .zip(&eval.residual_sums)
            .map(|(&ng, s)| lambda / (1.0 + lambda * ng) * s)
            .collect()
    } else {
        Vec::new()
    };
    let n_params = p + if random { 2 } else { 1 };
    Ok(FitResult {
        term_names: term_names.to_vec(),
        betas: eval.beta.iter().copied().collect(),
        std_errors,
        coef_p,
        tau2: lambda * eval.sigma2,
        sigma2: eval.sigma2,
        lambda,
        group_levels: levels,
        group_intercepts,
        loglik: eval.loglik,
        bic: n_params as f64 * (n as f64).ln() - 2.0 * eval.loglik,
        n,
        n_params,
        random,
        converged: lambda < LAMBDA_MAX * (1.0 - 1e-6),
    })
}

/// X b, plus each row's fitted random intercept when `include_random`.
pub fn predict(
    fit: &FitResult,
    x_new: &DMatrix<f64>,
    groups_new: Option<&[String]>,
    include_random: bool,
) -> Result<Vec<f64>, ModelError> {
    if x_new.ncols() != fit.betas.len() {
        return Err(ModelError::Shape);
    }
    let beta = DVector::from_column_slice(&fit.betas);
    let mut out: Vec<f64> = (x_new * beta).iter().copied().collect();
    if include_random && fit.random {
        let labels = groups_new.ok_or(ModelError::Shape)?;
        if labels.len() != out.len() {
            return Err(ModelError::Shape);
        }
        for (v, l) in out.iter_mut().zip(labels) {
            *v += fit
                .random_intercept(l)
                .ok_or_else(|| ModelError::UnseenGroup(l.clone()))?;
        }
    }
    Ok(out)
}
