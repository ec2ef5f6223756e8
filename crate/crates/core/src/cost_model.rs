//! Worst-case search cost predictors and the measured counterpart.
//!
//! Dense search over `s_bar` subplans with branching `n_child` costs
//! `n_child^s_bar * c_sub`; sparse search over `S / H` coarse subplans costs
//! `n_child^(S / H) * c_coarse`. Costs are in denoising iterations.

use thiserror::Error;

use crate::planner::PlanResult;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("{0} must be >= 1")]
    NonPositive(&'static str),
    #[error("{0} must be finite and > 0")]
    BadCost(&'static str),
    #[error("coarsening interval {h} exceeds total subplans {s}")]
    IntervalTooLarge { h: usize, s: usize },
    #[error("predicted cost overflows f64")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostInputs {
    /// Branching factor, the size of the guidance set.
    pub n_child: usize,
    /// Subplans from the root to the goal; 0 means the start already solves.
    pub s_bar: usize,
    /// Subplans covering the horizon.
    pub total_subplans: usize,
    /// Coarsening interval.
    pub interval: usize,
    /// Denoising iterations per dense subplan.
    pub c_sub: f64,
    /// Denoising iterations per coarse subplan.
    pub c_coarse: f64,
}

impl CostInputs {
    pub fn validate(&self) -> Result<(), CostError> {
        if self.n_child < 1 {
            return Err(CostError::NonPositive("n_child"));
        }
        if self.total_subplans < 1 {
            return Err(CostError::NonPositive("total_subplans"));
        }
        if self.interval < 1 {
            return Err(CostError::NonPositive("interval"));
        }
        if self.interval > self.total_subplans {
            return Err(CostError::IntervalTooLarge {
                h: self.interval,
                s: self.total_subplans,
            });
        }
        for (name, c) in [("c_sub", self.c_sub), ("c_coarse", self.c_coarse)] {
            if !(c.is_finite() && c > 0.0) {
                return Err(CostError::BadCost(name));
            }
        }
        Ok(())
    }
}

fn finite(x: f64) -> Result<f64, CostError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CostError::Overflow)
    }
}

pub fn predicted_cost_mctd(inputs: &CostInputs) -> Result<f64, CostError> {
    inputs.validate()?;
    let exponent = i32::try_from(inputs.s_bar).map_err(|_| CostError::Overflow)?;
    finite((inputs.n_child as f64).powi(exponent) * inputs.c_sub)
}

/// The exponent `S / H` is real-valued, not rounded.
pub fn predicted_cost_smctd(inputs: &CostInputs) -> Result<f64, CostError> {
    inputs.validate()?;
    let exponent = inputs.total_subplans as f64 / inputs.interval as f64;
    finite((inputs.n_child as f64).powf(exponent) * inputs.c_coarse)
}

/// Denoising iterations the sampler recorded for the run.
pub fn empirical_cost(result: &PlanResult) -> f64 {
    result.denoise_iterations as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs(
        n_child: usize,
        s_bar: usize,
        s: usize,
        h: usize,
        c_sub: f64,
        c_coarse: f64,
    ) -> CostInputs {
        CostInputs {
            n_child,
            s_bar,
            total_subplans: s,
            interval: h,
            c_sub,
            c_coarse,
        }
    }

    #[test]
    fn dense_examples() {
        assert_eq!(predicted_cost_mctd(&inputs(2, 3, 4, 1, 1.0, 1.0)), Ok(8.0));
        assert_eq!(predicted_cost_mctd(&inputs(3, 0, 4, 1, 7.5, 1.0)), Ok(7.5));
        assert_eq!(
            predicted_cost_mctd(&inputs(5, 4, 4, 1, 40.0, 1.0)),
            Ok(25_000.0)
        );
    }

    #[test]
    fn sparse_examples() {
        assert_eq!(
            predicted_cost_smctd(&inputs(2, 1, 20, 5, 1.0, 1.0)),
            Ok(16.0)
        );
        assert_eq!(
            predicted_cost_smctd(&inputs(5, 1, 12, 12, 1.0, 3.0)),
            Ok(15.0)
        );
        let real = predicted_cost_smctd(&inputs(4, 1, 3, 2, 1.0, 1.0)).unwrap();
        assert!((real - 8.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_and_overflow() {
        assert_eq!(
            predicted_cost_mctd(&inputs(0, 1, 4, 1, 1.0, 1.0)),
            Err(CostError::NonPositive("n_child"))
        );
        assert_eq!(
            predicted_cost_smctd(&inputs(2, 1, 4, 5, 1.0, 1.0)),
            Err(CostError::IntervalTooLarge { h: 5, s: 4 })
        );
        assert_eq!(
            predicted_cost_mctd(&inputs(2, 1, 4, 1, f64::NAN, 1.0)),
            Err(CostError::BadCost("c_sub"))
        );
        assert_eq!(
            predicted_cost_mctd(&inputs(10, 400, 400, 1, 1.0, 1.0)),
            Err(CostError::Overflow)
        );
        assert_eq!(
            predicted_cost_smctd(&inputs(10, 1, 4000, 1, 1.0, 1.0)),
            Err(CostError::Overflow)
        );
    }

    proptest! {
        #[test]
        fn sparse_with_unit_interval_matches_dense(n in 1usize..8, s in 1usize..20, c in 0.1f64..100.0) {
            let i = inputs(n, s, s, 1, c, c);
            prop_assert_eq!(predicted_cost_smctd(&i).unwrap(), predicted_cost_mctd(&i).unwrap());
        }

        #[test]
        fn predictors_increase_in_every_argument(
            n in 2usize..6, s in 1usize..12, h in 1usize..4, c in 0.5f64..10.0
        ) {
            let h = h.min(s);
            let base = inputs(n, s, s, h, c, c);
            let dense = predicted_cost_mctd(&base).unwrap();
            let sparse = predicted_cost_smctd(&base).unwrap();
            let dense_bumps = [
                CostInputs { n_child: n + 1, ..base },
                CostInputs { s_bar: s + 1, ..base },
                CostInputs { c_sub: c * 1.5, ..base },
            ];
            for bumped in dense_bumps {
                prop_assert!(predicted_cost_mctd(&bumped).unwrap() > dense);
            }
            let sparse_bumps = [
                CostInputs { n_child: n + 1, ..base },
                CostInputs { total_subplans: s + 1, ..base },
                CostInputs { c_coarse: c * 1.5, ..base },
            ];
            for bumped in sparse_bumps {
                prop_assert!(predicted_cost_smctd(&bumped).unwrap() > sparse);
            }
            if h < s {
                // a larger interval shrinks the exponent, so cost falls in H
                let wider = CostInputs { interval: h + 1, ..base };
                prop_assert!(predicted_cost_smctd(&wider).unwrap() < sparse);
            }
        }
    }
}
