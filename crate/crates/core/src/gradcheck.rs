//! Central finite-difference checks of analytic gradients.
//!
//! The numeric side only ever evaluates a scalar objective, so it is independent of
//! the reverse-mode code it checks.

use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::policy::{grad_log_prob, init_params, sequence_log_prob, Dims, PolicyParameters};
use crate::rng::{substream, Rng};
use crate::sft::sft_loss;

/// Relative errors below this magnitude of both gradients are measured absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Largest relative error the fidelity suite accepts.
pub const MAX_RELATIVE_ERROR: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }

    /// Folds another report into this one, keeping the worst coordinate.
    pub fn merge(&mut self, other: GradCheckReport) {
        self.coordinates += other.coordinates;
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst_coordinate = other.worst_coordinate;
            self.analytic = other.analytic;
            self.numeric = other.numeric;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` against `(f(θ + h e_i) - f(θ - h e_i)) / 2h` on
/// `coordinates` indices drawn uniformly with replacement.
pub fn check_gradient<F>(
    params: &PolicyParameters,
    analytic: &[f64],
    objective: F,
    step: f64,
    coordinates: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&PolicyParameters) -> Result<f64>,
{
    let n = params.flat().len();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        coordinates: 0,
        max_relative_error: 0.0,
        worst_coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for _ in 0..coordinates {
        let i = rng.gen_range(0..n);
        let x = params.flat()[i];
        probe.flat_mut()[i] = x + step;
        let plus = objective(&probe)?;
        probe.flat_mut()[i] = x - step;
        let minus = objective(&probe)?;
        probe.flat_mut()[i] = x;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        report.coordinates += 1;
        if err > report.max_relative_error || report.coordinates == 1 {
            report.max_relative_error = err;
            report.worst_coordinate = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Settings of the randomized gradient-fidelity suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityConfig {
    pub dims: Dims,
    pub instances: usize,
    pub coordinates: usize,
    pub step: f64,
    pub seed: u64,
    /// Test hook: scales every analytic gradient before comparison.
    pub corrupt_scale: Option<f64>,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            dims: Dims::default(),
            instances: 20,
            coordinates: 100,
            step: 1e-5,
            seed: 0,
            corrupt_scale: None,
        }
    }
}

/// Worst coordinates found for each checked objective.
#[derive(Debug, Clone, Serialize)]
pub struct FidelityReport {
    pub log_prob: GradCheckReport,
    pub sft_loss: GradCheckReport,
}

impl FidelityReport {
    pub fn max_relative_error(&self) -> f64 {
        self.log_prob
            .max_relative_error
            .max(self.sft_loss.max_relative_error)
    }

    pub fn passes(&self) -> bool {
        self.max_relative_error() <= MAX_RELATIVE_ERROR
    }
}

fn random_tokens(rng: &mut Rng, vocab: usize, len: std::ops::RangeInclusive<usize>) -> Vec<u32> {
    let n = rng.gen_range(len);
    (0..n).map(|_| rng.gen_range(0..vocab as u32)).collect()
}

/// Checks `grad_log_prob` and the `sft_loss` gradient on `instances` random
/// parameter sets, prompts and outputs, `coordinates` coordinates each.
pub fn fidelity_suite(config: &FidelityConfig) -> Result<FidelityReport> {
    let scale = config.corrupt_scale.unwrap_or(1.0);
    let v = config.dims.vocab;
    let mut log_prob: Option<GradCheckReport> = None;
    let mut sft: Option<GradCheckReport> = None;
    let fold = |acc: &mut Option<GradCheckReport>, r: GradCheckReport| match acc {
        Some(a) => a.merge(r),
        None => *acc = Some(r),
    };
    for i in 0..config.instances {
        let mut rng = substream(config.seed, &[0x6C0C, i as u64]);
        let params = init_params(config.seed.wrapping_add(i as u64), config.dims)?;
        let prompt = random_tokens(&mut rng, v, 1..=24);
        let output = random_tokens(&mut rng, v, 1..=12);
        let mut g = grad_log_prob(&params, &prompt, &output)?;
        g.iter_mut().for_each(|x| *x *= scale);
        let r = check_gradient(
            &params,
            &g,
            |q| Ok(sequence_log_prob(q, &prompt, &output)?.0),
            config.step,
            config.coordinates,
            &mut rng,
        )?;
        fold(&mut log_prob, r);

        let batch: Vec<(Vec<u32>, Vec<u32>)> = (0..3)
            .map(|_| {
                (
                    random_tokens(&mut rng, v, 1..=16),
                    random_tokens(&mut rng, v, 1..=4),
                )
            })
            .collect();
        let (_, mut g) = sft_loss(&params, &batch)?;
        g.iter_mut().for_each(|x| *x *= scale);
        let r = check_gradient(
            &params,
            &g,
            |q| Ok(sft_loss(q, &batch)?.0),
            config.step,
            config.coordinates,
            &mut rng,
        )?;
        fold(&mut sft, r);
    }
    match (log_prob, sft) {
        (Some(log_prob), Some(sft_loss)) => Ok(FidelityReport { log_prob, sft_loss }),
        _ => Err(crate::Error::Config(
            "fidelity suite needs at least one instance".into(),
        )),
    }
}
