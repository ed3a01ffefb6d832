//! Cox proportional-hazards regression.
//!
//! * [`cox_log_partial_likelihood`] and [`cox_gradient_hessian`] evaluate the
//!   partial likelihood under Efron or Breslow tie handling in one
//!   descending-time pass, with a running log-sum-exp shift.
//! * [`fit_cox`] maximizes it by Newton–Raphson with step-halving.
//! * [`wald_pvalue`] turns z statistics into two-sided p-values.

mod fit;
mod likelihood;
mod wald;

pub use fit::{fit_cox, CoxFitResult, CoxOptions};
pub use likelihood::{cox_gradient_hessian, cox_log_partial_likelihood, CoxDerivatives};
pub use wald::{normal_quantile, wald_pvalue};

use std::ops::Range;

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CoxError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-positive time at row {0}")]
    NonPositiveTime(usize),
    #[error("no events observed")]
    NoEvents,
    #[error("need more subjects ({n}) than covariates ({p})")]
    TooFewSubjects { n: usize, p: usize },
    #[error("singular information matrix: {0}")]
    SingularInformation(String),
    #[error("monotone likelihood: coefficient {coefficient} diverges (separation)")]
    MonotoneLikelihood { coefficient: usize },
    #[error("not converged after {0} iterations")]
    NotConverged(usize),
    #[error("z statistic is not finite")]
    NonFiniteZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ties {
    #[default]
    Efron,
    Breslow,
}

impl Ties {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "efron" => Some(Ties::Efron),
            "breslow" => Some(Ties::Breslow),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ties::Efron => "efron",
            Ties::Breslow => "breslow",
        }
    }
}

/// Right-censored survival data with a fixed covariate matrix.
///
/// Subjects are pre-sorted by descending time and grouped by exact time
/// equality, so each evaluation is a single pass.
#[derive(Debug, Clone)]
pub struct SurvivalData {
    n: usize,
    p: usize,
    /// Row-major n × p.
    x: Vec<f64>,
    time: Vec<f64>,
    event: Vec<bool>,
    pub ties: Ties,
    /// Subject indices by descending time.
    order: Vec<usize>,
    /// Ranges into `order` sharing one time value.
    groups: Vec<Range<usize>>,
}

impl SurvivalData {
    pub fn new(
        rows: &[Vec<f64>],
        time: &[f64],
        event: &[bool],
        ties: Ties,
    ) -> Result<Self, CoxError> {
        let n = rows.len();
        if time.len() != n || event.len() != n {
            return Err(CoxError::DimensionMismatch(format!(
                "{n} rows, {} times, {} events",
                time.len(),
                event.len()
            )));
        }
        let p = rows.first().map_or(0, |r| r.len());
        let mut x = Vec::with_capacity(n * p);
        for row in rows {
            if row.len() != p {
                return Err(CoxError::DimensionMismatch(format!(
                    "ragged covariate rows ({} vs {p})",
                    row.len()
                )));
            }
            x.extend_from_slice(row);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoxError::NonFinite("covariates"));
        }
        for (i, t) in time.iter().enumerate() {
            if !t.is_finite() {
                return Err(CoxError::NonFinite("time"));
            }
            if *t <= 0.0 {
                return Err(CoxError::NonPositiveTime(i));
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        // Descending time; index as tie-breaker keeps the pass deterministic.
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        for pos in 1..=n {
            if pos == n || time[order[pos]] != time[order[start]] {
                groups.push(start..pos);
                start = pos;
            }
        }

        Ok(SurvivalData {
            n,
            p,
            x,
            time: time.to_vec(),
            event: event.to_vec(),
            ties,
            order,
            groups,
        })
    }

    pub fn with_ties(mut self, ties: Ties) -> Self {
        self.ties = ties;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn event(&self) -> &[bool] {
        &self.event
    }

    pub fn event_count(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    pub fn has_ties(&self) -> bool {
        self.groups.iter().any(|g| {
            g.clone().filter(|&pos| self.event[self.order[pos]]).count() > 1
        })
    }

    pub(crate) fn groups(&self) -> impl Iterator<Item = &[usize]> {
        self.groups.iter().map(|g| &self.order[g.clone()])
    }

    /// Linear predictor `x_i · beta`.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// True when moving along `direction` never lowers any event's share of
    /// its risk set and strictly raises at least one: the partial likelihood
    /// then increases without bound along it and no finite maximizer exists.
    pub fn separates(&self, direction: &[f64]) -> bool {
        let v = self.linear_predictor(direction);
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            return false;
        }
        let tol = 1e-9 * scale;
        let mut risk_max = f64::NEG_INFINITY;
        let mut risk_min = f64::INFINITY;
        let mut strict = false;
        for members in self.groups() {
            for &i in members {
                risk_max = risk_max.max(v[i]);
                risk_min = risk_min.min(v[i]);
            }
            for &i in members.iter().filter(|&&i| self.event[i]) {
                if v[i] < risk_max - tol {
                    return false;
                }
                if v[i] > risk_min + tol {
                    strict = true;
                }
            }
        }
        strict
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_follow_descending_time() {
        let rows = vec![vec![0.0]; 5];
        let d = SurvivalData::new(
            &rows,
            &[2.0, 5.0, 2.0, 1.0, 5.0],
            &[true; 5],
            Ties::Efron,
        )
        .unwrap();
        let groups: Vec<Vec<usize>> = d.groups().map(|g| g.to_vec()).collect();
        assert_eq!(groups, vec![vec![1, 4], vec![0, 2], vec![3]]);
        assert!(d.has_ties());
    }

    #[test]
    fn input_validation() {
        let rows = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            SurvivalData::new(&rows, &[1.0], &[true], Ties::Efron),
            Err(CoxError::DimensionMismatch(_))
        ));
        assert_eq!(
            SurvivalData::new(&rows, &[1.0, 0.0], &[true, true], Ties::Efron).unwrap_err(),
            CoxError::NonPositiveTime(1)
        );
        assert_eq!(
            SurvivalData::new(&[vec![f64::NAN], vec![1.0]], &[1.0, 2.0], &[true, true], Ties::Efron)
                .unwrap_err(),
            CoxError::NonFinite("covariates")
        );
    }

    #[test]
    fn separation_detection() {
        // The only event has the largest covariate in its risk set.
        let rows = vec![vec![3.0], vec![1.0], vec![2.0]];
        let d = SurvivalData::new(&rows, &[1.0, 2.0, 3.0], &[true, false, false], Ties::Efron)
            .unwrap();
        assert!(d.separates(&[1.0]));
        assert!(!d.separates(&[-1.0]));

        let rows = vec![vec![1.0], vec![3.0], vec![2.0]];
        let d = SurvivalData::new(&rows, &[1.0, 2.0, 3.0], &[true, true, false], Ties::Efron)
            .unwrap();
        assert!(!d.separates(&[1.0]));
        assert!(!d.separates(&[-1.0]));
    }
}
