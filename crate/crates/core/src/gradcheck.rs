//! Central finite-difference check of the analytic backward pass.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Gradient, Network};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Differences below this are accepted regardless of the relative error;
    /// it sits above the cancellation noise of a central difference at `step`.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            rel_tol: 1e-4,
            abs_floor: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordFailure {
    pub sample: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose perturbation flips a relu unit, where the loss is
    /// not differentiable at the scale of the step.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub failures: Vec<CoordFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.failures.extend(other.failures);
    }
}

/// Checks [`Network::backward`] on every coordinate for every sample.
pub fn check_gradients(net: &Network, samples: &[(Vec<f64>, usize)], cfg: GradCheckConfig) -> Result<GradCheckReport> {
    check_gradients_with(net, samples, cfg, |n, x, y| n.backward(x, y).map(|(_, g)| g))
}

/// Same as [`check_gradients`] against an arbitrary backward routine.
pub fn check_gradients_with<F>(
    net: &Network,
    samples: &[(Vec<f64>, usize)],
    cfg: GradCheckConfig,
    backward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Network, &[f64], usize) -> Result<Gradient>,
{
    if net.is_empty() {
        return Err(Error::config("gradient check needs at least one layer"));
    }
    let base = net.params();
    let mut probe = net.clone();
    let mut report = GradCheckReport::default();
    for (s, (x, y)) in samples.iter().enumerate() {
        let analytic = backward(net, x, *y)?;
        let pattern = net.relu_pattern(x)?;
        let mut part = GradCheckReport::default();
        for i in 0..base.len() {
            let mut loss_at = |delta: f64| -> Result<(f64, bool)> {
                let mut p = base.clone();
                p.as_mut_slice()[i] += delta;
                probe.set_params(&p)?;
                let kink = probe.relu_pattern(x)? != pattern;
                Ok((probe.loss(x, *y)?, kink))
            };
            let (plus, kink_p) = loss_at(cfg.step)?;
            let (minus, kink_m) = loss_at(-cfg.step)?;
            if kink_p || kink_m {
                part.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.as_slice()[i];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > 0.0 { diff / scale } else { 0.0 };
            part.checked += 1;
            if diff > cfg.abs_floor {
                part.max_rel_error = part.max_rel_error.max(rel);
                if rel > cfg.rel_tol {
                    part.failures.push(CoordFailure {
                        sample: s,
                        coord: i,
                        analytic: a,
                        numeric,
                        rel_error: rel,
                    });
                }
            }
        }
        report.merge(part);
    }
    Ok(report)
}

/// A random dense network of one to three layers with every width at most 16.
pub fn random_network<R: Rng + ?Sized>(rng: &mut R) -> Network {
    let depth = rng.gen_range(1..=3);
    let mut dims = vec![rng.gen_range(1..=16)];
    for _ in 0..depth {
        dims.push(rng.gen_range(2..=16));
    }
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let act = if l + 1 == depth {
                Activation::Identity
            } else {
                match rng.gen_range(0..3) {
                    0 => Activation::Relu,
                    1 => Activation::Sigmoid,
                    _ => Activation::Identity,
                }
            };
            let mut layer = DenseLayer::zeros(w[0], w[1], act).expect("positive dims");
            layer.init_uniform(rng);
            layer
        })
        .collect();
    Network::new(layers).expect("dims chain by construction")
}

/// Random standard-normal-ish inputs with random labels for `net`.
pub fn random_samples<R: Rng + ?Sized>(net: &Network, count: usize, rng: &mut R) -> Vec<(Vec<f64>, usize)> {
    let n_in = net.input_dim().unwrap_or(0);
    let n_out = net.output_dim().unwrap_or(1);
    (0..count)
        .map(|_| {
            let x = (0..n_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (x, rng.gen_range(0..n_out))
        })
        .collect()
}
