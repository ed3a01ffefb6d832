use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::likelihood::{cox_gradient_hessian, cox_log_partial_likelihood};
use super::wald::wald_pvalue;
use super::{CoxError, SurvivalData};

/// Coefficients beyond this magnitude are treated as diverging.
const DIVERGENCE_BOUND: f64 = 50.0;
const MAX_HALVINGS: usize = 40;
pub const MAX_POLISH: usize = 3;

/// Likelihood differences this small are indistinguishable from rounding.
fn rounding_noise(ll: f64) -> f64 {
    64.0 * f64::EPSILON * (1.0 + ll.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub tol_step: f64,
    pub tol_loglik: f64,
    /// Normal quantile for the confidence intervals (1.96 for 95%).
    pub ci_multiplier: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            max_iter: 50,
            tol_step: 1e-7,
            tol_loglik: 1e-9,
            ci_multiplier: 1.96,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFitResult {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub hr: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub z: Vec<f64>,
    pub p_value: Vec<f64>,
    pub log_likelihood: f64,
    /// Log partial likelihood after each accepted step, starting at β = 0.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl CoxFitResult {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Turn a non-converged fit into [`CoxError::NotConverged`].
    pub fn require_converged(self) -> Result<Self, CoxError> {
        if self.converged {
            Ok(self)
        } else {
            Err(CoxError::NotConverged(self.iterations))
        }
    }
}

fn information(hessian: &[f64], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |r, c| -hessian[r * p + c])
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn diverging(beta: &[f64]) -> Option<usize> {
    beta.iter().position(|b| b.abs() > DIVERGENCE_BOUND)
}

fn check_inputs(data: &SurvivalData) -> Result<(), CoxError> {
    let (n, p) = (data.n(), data.p());
    if data.event_count() == 0 {
        return Err(CoxError::NoEvents);
    }
    if n <= p {
        return Err(CoxError::TooFewSubjects { n, p });
    }
    for j in 0..p {
        let first = data.row(0)[j];
        if (1..n).all(|i| data.row(i)[j] == first) {
            return Err(CoxError::SingularInformation(format!("covariate {j} is constant")));
        }
        let mut e = vec![0.0; p];
        for sign in [1.0, -1.0] {
            e[j] = sign;
            if data.separates(&e) {
                return Err(CoxError::MonotoneLikelihood { coefficient: j });
            }
        }
    }
    Ok(())
}

/// Maximize the partial likelihood by Newton–Raphson from β = 0.
///
/// A step that lowers the likelihood by more than rounding noise is halved
/// until it does not. The fit stops when the largest coefficient change is
/// below `tol_step` or the likelihood gain is below `tol_loglik`, then takes
/// up to [`MAX_POLISH`] further Newton steps so the estimate settles to
/// working precision.
pub fn fit_cox(data: &SurvivalData, options: &CoxOptions) -> Result<CoxFitResult, CoxError> {
    check_inputs(data)?;
    let p = data.p();
    let mut beta = vec![0.0; p];
    let mut current = cox_gradient_hessian(data, &beta)?;
    let mut trace = vec![current.log_likelihood];
    let mut converged = false;
    let mut iterations = 0;
    let mut polishing = false;
    let mut polish_steps = 0;

    while iterations < options.max_iter {
        iterations += 1;
        let info = information(&current.hessian, p);
        let chol = info.cholesky().ok_or_else(|| {
            CoxError::SingularInformation(format!("at iteration {iterations}"))
        })?;
        let step = chol.solve(&DVector::from_column_slice(&current.gradient));
        let step: Vec<f64> = step.iter().copied().collect();

        if !polishing && data.separates(&step) {
            let j = step
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map_or(0, |(j, _)| j);
            return Err(CoxError::MonotoneLikelihood { coefficient: j });
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            if let Some(j) = diverging(&candidate) {
                return Err(CoxError::MonotoneLikelihood { coefficient: j });
            }
            let ll = cox_log_partial_likelihood(data, &candidate)?;
            if ll >= current.log_likelihood - rounding_noise(current.log_likelihood) {
                accepted = Some((candidate, ll));
                break;
            }
            scale *= 0.5;
        }

        let Some((candidate, ll)) = accepted else {
            // No ascent at machine precision: already at the maximum.
            converged = true;
            break;
        };
        let delta_beta = max_abs(&step) * scale;
        let delta_ll = ll - current.log_likelihood;
        beta = candidate;
        current = cox_gradient_hessian(data, &beta)?;
        trace.push(current.log_likelihood);

        if polishing {
            polish_steps += 1;
            let settled = delta_beta <= 1e-13 * (1.0 + max_abs(&beta));
            if settled || polish_steps == MAX_POLISH {
                converged = true;
                break;
            }
            continue;
        }
        if delta_beta < options.tol_step || delta_ll.abs() < options.tol_loglik {
            polishing = true;
        }
    }
    if polishing {
        converged = true;
    }

    let info = information(&current.hessian, p);
    let inverse = info
        .cholesky()
        .ok_or_else(|| CoxError::SingularInformation("at the final estimate".into()))?
        .inverse();
    let se: Vec<f64> = (0..p).map(|j| inverse[(j, j)].sqrt()).collect();
    if se.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(CoxError::SingularInformation("non-positive variance".into()));
    }
    let z: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let p_value = z.iter().map(|&z| wald_pvalue(z)).collect::<Result<Vec<_>, _>>()?;
    let q = options.ci_multiplier;
    Ok(CoxFitResult {
        hr: beta.iter().map(|b| b.exp()).collect(),
        ci_low: beta.iter().zip(&se).map(|(b, s)| (b - q * s).exp()).collect(),
        ci_high: beta.iter().zip(&se).map(|(b, s)| (b + q * s).exp()).collect(),
        z,
        p_value,
        se,
        beta,
        log_likelihood: current.log_likelihood,
        loglik_trace: trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::Ties;

    #[test]
    fn symmetric_pair_gives_zero() {
        for ties in [Ties::Efron, Ties::Breslow] {
            let d = SurvivalData::new(&[vec![0.0], vec![1.0]], &[2.0, 2.0], &[true, true], ties)
                .unwrap();
            let fit = fit_cox(&d, &CoxOptions::default()).unwrap();
            assert!(fit.beta[0].abs() < 1e-8, "{ties:?}: {}", fit.beta[0]);
        }
    }

    #[test]
    fn all_censored() {
        let d = SurvivalData::new(&[vec![0.0], vec![1.0], vec![2.0]], &[1.0, 2.0, 3.0], &[false; 3], Ties::Efron)
            .unwrap();
        assert_eq!(fit_cox(&d, &CoxOptions::default()), Err(CoxError::NoEvents));
    }

    #[test]
    fn strict_maximum_event_is_monotone() {
        let d = SurvivalData::new(
            &[vec![3.0], vec![1.0], vec![2.0]],
            &[1.0, 2.0, 3.0],
            &[true, false, false],
            Ties::Efron,
        )
        .unwrap();
        assert_eq!(
            fit_cox(&d, &CoxOptions::default()),
            Err(CoxError::MonotoneLikelihood { coefficient: 0 })
        );
    }

    #[test]
    fn constant_and_collinear_columns() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 0.5], vec![1.0, 1.5], vec![1.0, 3.0]];
        let d = SurvivalData::new(&rows, &[1.0, 2.0, 3.0, 4.0], &[true; 4], Ties::Efron).unwrap();
        assert!(matches!(
            fit_cox(&d, &CoxOptions::default()),
            Err(CoxError::SingularInformation(_))
        ));
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![0.5, 1.0], vec![3.0, 6.0]];
        let d = SurvivalData::new(&rows, &[1.0, 2.0, 3.0, 4.0], &[true; 4], Ties::Efron).unwrap();
        assert!(matches!(
            fit_cox(&d, &CoxOptions::default()),
            Err(CoxError::SingularInformation(_))
        ));
    }

    #[test]
    fn too_few_subjects() {
        let d = SurvivalData::new(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 2.0], &[true, true], Ties::Efron)
            .unwrap();
        assert_eq!(
            fit_cox(&d, &CoxOptions::default()),
            Err(CoxError::TooFewSubjects { n: 2, p: 2 })
        );
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 0.37).sin()]).collect();
        let time: Vec<f64> = (0..12).map(|i| 1.0 + ((i * 5) % 12) as f64).collect();
        let d = SurvivalData::new(&rows, &time, &[true; 12], Ties::Efron).unwrap();
        let opts = CoxOptions { max_iter: 1, ..CoxOptions::default() };
        let fit = fit_cox(&d, &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.clone().require_converged(), Err(CoxError::NotConverged(1)));
        let full = fit_cox(&d, &CoxOptions::default()).unwrap();
        assert!(full.converged);
    }
}
