//! Shared engine for linear positive (LINPOS) models `g = B q` with
//! nonnegative unknowns `q` on the simplex and observed frequencies `h`.
//!
//! The single-mode (`B = A`, `h = f`) and two-mode (`B` stacked over three
//! outcome blocks) reconstructions are both instances of the multiplicative
//! update
//!
//! ```text
//! q_p <- q_p sum_mu [B_mu,p / sum_lambda B_lambda,p] h_mu / g_mu(q)
//! ```
//!
//! followed by renormalization. The iteration increases the LINPOS
//! log-likelihood `sum_mu h_mu ln(g_mu / sum_lambda g_lambda)`, which is what
//! the trace records.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::{EmConfig, Init};
use crate::error::{Error, Result};

/// Floor applied to a model probability inside the ratio `h / g`.
pub(crate) const PROBABILITY_FLOOR: f64 = 1e-300;

/// Relative level below which a Fisher information is treated as zero.
const FISHER_CANCELLATION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Mean absolute residual fell below the configured threshold.
    EpsilonThreshold,
    /// Residual stopped moving over the stall window.
    Stalled,
    MaxIterations,
}

impl StopReason {
    pub fn is_converged(self) -> bool {
        !matches!(self, StopReason::MaxIterations)
    }
}

pub(crate) struct LinposModel {
    rows: usize,
    cols: usize,
    /// Row-major copy of `B`.
    matrix: Vec<f64>,
    /// `1 / sum_lambda B_lambda,p`, zero for empty columns.
    inv_col_sums: Vec<f64>,
    col_sums: Vec<f64>,
    observed: Vec<f64>,
    /// Efficiency attached to each row, for error messages.
    row_eta: Vec<f64>,
}

pub(crate) struct RunOutcome {
    pub estimate: Vec<f64>,
    pub iterations_used: usize,
    pub stop_reason: StopReason,
    pub final_epsilon: f64,
    pub trace_iterations: Vec<usize>,
    pub epsilon_trace: Vec<f64>,
    pub loglik_trace: Vec<f64>,
    pub fidelity_trace: Option<Vec<f64>>,
    pub diagnostics: Vec<String>,
}

impl LinposModel {
    pub fn new(matrix: &DMatrix<f64>, observed: Vec<f64>, row_eta: Vec<f64>) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows != observed.len() || rows != row_eta.len() {
            return Err(Error::domain(format!(
                "model has {rows} rows but {} observations",
                observed.len()
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::domain("empty model"));
        }
        let mut flat = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            flat.extend(matrix.row(r).iter().copied());
        }
        let col_sums: Vec<f64> = (0..cols).map(|c| matrix.column(c).sum()).collect();
        let inv_col_sums = col_sums
            .iter()
            .map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 })
            .collect();
        Ok(LinposModel {
            rows,
            cols,
            matrix: flat,
            inv_col_sums,
            col_sums,
            observed,
            row_eta,
        })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[r * self.cols..(r + 1) * self.cols];
            *o = row.iter().zip(x).map(|(b, q)| b * q).sum();
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.predict_into(x, &mut out);
        out
    }

    /// One multiplicative update. Returns whether the probability floor was
    /// used for a vanishing model probability with zero observed frequency.
    pub fn step_into(&self, x: &[f64], predicted: &[f64], out: &mut [f64]) -> Result<bool> {
        let mut floored = false;
        let mut ratios = vec![0.0; self.rows];
        for (r, ratio) in ratios.iter_mut().enumerate() {
            let h = self.observed[r];
            let g = predicted[r];
            if g <= 0.0 && h > 0.0 {
                return Err(Error::DegenerateModel {
                    eta: self.row_eta[r],
                    frequency: h,
                });
            }
            if g < PROBABILITY_FLOOR {
                floored = true;
            }
            *ratio = h / g.max(PROBABILITY_FLOOR);
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, ratio) in ratios.iter().enumerate() {
            if *ratio == 0.0 {
                continue;
            }
            let row = &self.matrix[r * self.cols..(r + 1) * self.cols];
            for (o, b) in out.iter_mut().zip(row) {
                *o += b * ratio;
            }
        }
        let mut total = 0.0;
        for ((o, q), w) in out.iter_mut().zip(x).zip(&self.inv_col_sums) {
            *o *= q * w;
            total += *o;
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::domain(
                "EM update annihilated the estimate (no column explains the data)",
            ));
        }
        out.iter_mut().for_each(|o| *o /= total);
        Ok(floored)
    }

    /// `rows^-1 sum |h - g|`
    pub fn epsilon(&self, predicted: &[f64]) -> f64 {
        self.observed
            .iter()
            .zip(predicted)
            .map(|(h, g)| (h - g).abs())
            .sum::<f64>()
            / self.rows as f64
    }

    /// `sum_mu h_mu ln(g_mu / sum g)`, `-inf` when a row with positive
    /// frequency has zero model probability.
    pub fn objective(&self, predicted: &[f64]) -> f64 {
        let total: f64 = predicted.iter().sum();
        if total <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut acc = 0.0;
        for (h, g) in self.observed.iter().zip(predicted) {
            if *h > 0.0 {
                if *g <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                acc += h * (g / total).ln();
            }
        }
        acc
    }

    /// `sigma_p^2 = (K F_p)^-1` with
    /// `F_p = sum_mu d_mu^-1 (d d_mu / d q_p)^2`, `d_mu = g_mu / sum g`.
    /// `None` marks an unbounded variance (`F_p = 0`).
    pub fn fisher_variances(&self, x: &[f64], settings: usize) -> Vec<Option<f64>> {
        let g = self.predict(x);
        let total: f64 = g.iter().sum();
        if total <= 0.0 || settings == 0 {
            return vec![None; self.cols];
        }
        (0..self.cols)
            .map(|p| {
                let mut info = 0.0;
                let mut scale = 0.0;
                for (mu, g_mu) in g.iter().enumerate() {
                    let d = g_mu / total;
                    if d <= 0.0 {
                        continue;
                    }
                    let direct = self.matrix[mu * self.cols + p] / total;
                    let deriv = direct - g_mu * self.col_sums[p] / (total * total);
                    info += deriv * deriv / d;
                    scale += direct * direct / d;
                }
                if info > FISHER_CANCELLATION_FLOOR * scale && info > 0.0 {
                    Some(1.0 / (settings as f64 * info))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Runs the iteration from the configured initial point.
    pub fn run(&self, config: &EmConfig, reference: Option<&[f64]>) -> Result<RunOutcome> {
        config.validate()?;
        let mut x = match &config.init {
            Init::Uniform => vec![1.0 / self.cols as f64; self.cols],
            Init::Custom(weights) => {
                if weights.len() != self.cols {
                    return Err(Error::domain(format!(
                        "initial point has {} entries, model has {}",
                        weights.len(),
                        self.cols
                    )));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::domain("initial point must be nonnegative"));
                }
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    return Err(Error::domain("initial point sums to zero"));
                }
                weights.iter().map(|w| w / total).collect()
            }
        };
        if let Some(r) = reference {
            if r.len() != self.cols {
                return Err(Error::domain(format!(
                    "reference has {} entries, model has {}",
                    r.len(),
                    self.cols
                )));
            }
        }
        let fidelity_of = |q: &[f64]| reference.map(|r| crate::em::bhattacharyya(r, q));

        let mut predicted = self.predict(&x);
        let mut next = vec![0.0; self.cols];
        let mut epsilon = self.epsilon(&predicted);
        let mut history: VecDeque<f64> = VecDeque::with_capacity(config.stall_window + 1);
        history.push_back(epsilon);

        let mut out = RunOutcome {
            estimate: Vec::new(),
            iterations_used: 0,
            stop_reason: StopReason::MaxIterations,
            final_epsilon: epsilon,
            trace_iterations: Vec::new(),
            epsilon_trace: Vec::new(),
            loglik_trace: Vec::new(),
            fidelity_trace: reference.map(|_| Vec::new()),
            diagnostics: Vec::new(),
        };
        let mut floored_reported = false;

        if epsilon < config.epsilon_threshold {
            out.stop_reason = StopReason::EpsilonThreshold;
        } else {
            for it in 1..=config.max_iterations {
                if self.step_into(&x, &predicted, &mut next)? && !floored_reported {
                    out.diagnostics.push(format!(
                        "iteration {it}: model probability below {PROBABILITY_FLOOR:e} \
                         with zero observed frequency; floored inside the ratio"
                    ));
                    floored_reported = true;
                }
                std::mem::swap(&mut x, &mut next);
                self.predict_into(&x, &mut predicted);
                epsilon = self.epsilon(&predicted);
                out.iterations_used = it;

                let mut stop = None;
                if epsilon < config.epsilon_threshold {
                    stop = Some(StopReason::EpsilonThreshold);
                } else if config.stall_window > 0 && history.len() >= config.stall_window {
                    let old = history[0];
                    if (epsilon - old).abs() < config.stall_tolerance {
                        stop = Some(StopReason::Stalled);
                    }
                }
                // history[0] is epsilon from `stall_window` iterations back
                history.push_back(epsilon);
                if history.len() > config.stall_window {
                    history.pop_front();
                }

                let last = stop.is_some() || it == config.max_iterations;
                if it % config.record_diagnostics_every == 0 || last {
                    out.trace_iterations.push(it);
                    out.epsilon_trace.push(epsilon);
                    out.loglik_trace.push(self.objective(&predicted));
                    if let (Some(trace), Some(g)) = (out.fidelity_trace.as_mut(), fidelity_of(&x)) {
                        trace.push(g);
                    }
                }
                if let Some(reason) = stop {
                    out.stop_reason = reason;
                    break;
                }
            }
        }
        out.final_epsilon = epsilon;
        out.estimate = x;
        Ok(out)
    }
}
