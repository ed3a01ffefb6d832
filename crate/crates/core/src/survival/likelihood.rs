use super::{CoxError, SurvivalData, Ties};

/// Log partial likelihood with its score vector and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxDerivatives {
    pub log_likelihood: f64,
    pub gradient: Vec<f64>,
    /// Row-major p × p Hessian of the log partial likelihood (negative
    /// semidefinite); the observed information is its negation.
    pub hessian: Vec<f64>,
}

/// Risk-set accumulators stored relative to a running shift `m`, so the
/// true sums are `e^m · s0`, `e^m · s1`, `e^m · s2`.
struct RiskSums {
    p: usize,
    m: f64,
    s0: f64,
    s1: Vec<f64>,
    /// Upper triangle only, row-major p × p.
    s2: Vec<f64>,
}

impl RiskSums {
    fn new(p: usize, second_order: bool) -> Self {
        RiskSums {
            p,
            m: f64::NEG_INFINITY,
            s0: 0.0,
            s1: vec![0.0; p],
            s2: if second_order { vec![0.0; p * p] } else { Vec::new() },
        }
    }

    fn clear(&mut self) {
        self.s0 = 0.0;
        self.s1.fill(0.0);
        self.s2.fill(0.0);
    }

    fn rescale(&mut self, factor: f64) {
        self.s0 *= factor;
        self.s1.iter_mut().for_each(|v| *v *= factor);
        self.s2.iter_mut().for_each(|v| *v *= factor);
    }

    /// Raise the shift to at least `eta`.
    fn lift(&mut self, eta: f64) {
        if eta > self.m {
            if self.m.is_finite() {
                self.rescale((self.m - eta).exp());
            }
            self.m = eta;
        }
    }

    fn add(&mut self, eta: f64, row: &[f64], shift: f64) {
        let w = (eta - shift).exp();
        self.s0 += w;
        for (s, x) in self.s1.iter_mut().zip(row) {
            *s += w * x;
        }
        if !self.s2.is_empty() {
            let p = self.p;
            for a in 0..p {
                let wa = w * row[a];
                for b in a..p {
                    self.s2[a * p + b] += wa * row[b];
                }
            }
        }
    }
}

fn check_beta(data: &SurvivalData, beta: &[f64]) -> Result<(), CoxError> {
    if beta.len() != data.p() {
        return Err(CoxError::DimensionMismatch(format!(
            "beta has {} entries, data has {} covariates",
            beta.len(),
            data.p()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(CoxError::NonFinite("beta"));
    }
    if data.event_count() == 0 {
        return Err(CoxError::NoEvents);
    }
    Ok(())
}

fn evaluate(data: &SurvivalData, beta: &[f64], second_order: bool) -> CoxDerivatives {
    let p = data.p();
    let eta = data.linear_predictor(beta);
    let mut risk = RiskSums::new(p, second_order);
    let mut tied = RiskSums::new(p, second_order);

    let mut loglik = 0.0;
    let mut gradient = vec![0.0; p];
    let mut hessian = vec![0.0; if second_order { p * p } else { 0 }];
    let mut a = vec![0.0; p];

    for members in data.groups() {
        for &i in members {
            risk.lift(eta[i]);
        }
        let shift = risk.m;
        for &i in members {
            risk.add(eta[i], data.row(i), shift);
        }

        let events: Vec<usize> = members.iter().copied().filter(|&i| data.event()[i]).collect();
        let d = events.len();
        if d == 0 {
            continue;
        }
        tied.clear();
        for &i in &events {
            loglik += eta[i];
            for (g, x) in gradient.iter_mut().zip(data.row(i)) {
                *g += x;
            }
            tied.add(eta[i], data.row(i), shift);
        }

        for l in 0..d {
            let f = match data.ties {
                Ties::Efron => l as f64 / d as f64,
                Ties::Breslow => 0.0,
            };
            let den = risk.s0 - f * tied.s0;
            loglik -= shift + den.ln();
            for j in 0..p {
                a[j] = (risk.s1[j] - f * tied.s1[j]) / den;
                gradient[j] -= a[j];
            }
            if second_order {
                for r in 0..p {
                    for c in r..p {
                        let k = r * p + c;
                        hessian[k] -= (risk.s2[k] - f * tied.s2[k]) / den - a[r] * a[c];
                    }
                }
            }
        }
    }

    if second_order {
        for r in 0..p {
            for c in 0..r {
                hessian[r * p + c] = hessian[c * p + r];
            }
        }
    }
    CoxDerivatives {
        log_likelihood: loglik,
        gradient,
        hessian,
    }
}

pub fn cox_log_partial_likelihood(data: &SurvivalData, beta: &[f64]) -> Result<f64, CoxError> {
    check_beta(data, beta)?;
    Ok(evaluate(data, beta, false).log_likelihood)
}

pub fn cox_gradient_hessian(
    data: &SurvivalData,
    beta: &[f64],
) -> Result<CoxDerivatives, CoxError> {
    check_beta(data, beta)?;
    Ok(evaluate(data, beta, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_model_distinct_times() {
        let rows = vec![vec![0.7], vec![-1.2]];
        let d = SurvivalData::new(&rows, &[1.0, 2.0], &[true, true], Ties::Efron).unwrap();
        let ll = cox_log_partial_likelihood(&d, &[0.0]).unwrap();
        assert!((ll + 2f64.ln()).abs() < 1e-15);

        let rows = vec![vec![0.0]; 5];
        let d = SurvivalData::new(&rows, &[5.0, 4.0, 3.0, 2.0, 1.0], &[true; 5], Ties::Breslow)
            .unwrap();
        let expected: f64 = -(1..=5).map(|k| (k as f64).ln()).sum::<f64>();
        assert!((cox_log_partial_likelihood(&d, &[0.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_subject_is_flat() {
        let d = SurvivalData::new(&[vec![2.5, -1.0]], &[3.0], &[true], Ties::Efron).unwrap();
        for beta in [[0.0, 0.0], [1.5, -2.0], [-7.0, 3.0]] {
            let out = cox_gradient_hessian(&d, &beta).unwrap();
            assert!(out.log_likelihood.abs() < 1e-15);
            assert!(out.gradient.iter().all(|g| g.abs() < 1e-12));
        }
    }

    #[test]
    fn no_events_and_bad_beta() {
        let d = SurvivalData::new(&[vec![1.0], vec![2.0]], &[1.0, 2.0], &[false, false], Ties::Efron)
            .unwrap();
        assert_eq!(cox_log_partial_likelihood(&d, &[0.0]), Err(CoxError::NoEvents));
        let d = d.clone();
        assert!(matches!(
            cox_log_partial_likelihood(&d, &[0.0, 1.0]),
            Err(CoxError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn huge_linear_predictors_stay_finite() {
        let rows = vec![vec![800.0], vec![-800.0], vec![10.0], vec![0.0]];
        let d = SurvivalData::new(&rows, &[1.0, 2.0, 3.0, 4.0], &[true, true, false, true], Ties::Efron)
            .unwrap();
        let out = cox_gradient_hessian(&d, &[1.0]).unwrap();
        assert!(out.log_likelihood.is_finite());
        assert!(out.gradient[0].is_finite());
        assert!(out.hessian[0].is_finite());
    }
}
