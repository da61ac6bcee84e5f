//! Independent oracles for the engine.
//!
//! Vanilla gradients are checked against central finite differences of the
//! loss. Short-circuit gradients are not the gradient of any scalar objective,
//! so they are checked algebraically instead: the SC run minus the vanilla run
//! must equal `Σ λ·a^{l-1}ᵀ δ^{sc}` on the same trace.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::activation::Activation;
use crate::engine::{backward, forward, ForwardTrace, ParamGrads};
use crate::error::{Error, Result};
use crate::loss::loss_value;
use crate::matrix::Matrix;
use crate::topology::{Params, Topology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub epsilon: f64,
    pub tolerance_rel: f64,
    pub tolerance_abs: f64,
    /// Refuse networks with more scalar parameters than this.
    pub max_params: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance_rel: 1e-5,
            tolerance_abs: 1e-8,
            max_params: 10_000,
        }
    }
}

impl FdConfig {
    fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.tolerance_rel > 0.0 && self.tolerance_abs > 0.0) {
            return Err(Error::Contract(
                "finite-difference epsilon and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Whether `a` and `b` agree within `max(rel·max(|a|,|b|), abs)`.
    pub fn within(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.threshold(a, b)
    }

    fn threshold(&self, a: f64, b: f64) -> f64 {
        (self.tolerance_rel * a.abs().max(b.abs())).max(self.tolerance_abs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ParamCoord {
    pub layer: usize,
    pub kind: ParamKind,
    pub row: usize,
    pub col: usize,
}

/// Finite-difference gradient plus the coordinates whose perturbation moved
/// some relu pre-activation across zero (unreliable there).
#[derive(Debug, Clone)]
pub struct FdGradient {
    pub grads: ParamGrads,
    pub kinks: BTreeSet<ParamCoord>,
}

/// Central-difference gradient of the vanilla loss for every parameter.
pub fn fd_gradient(
    topology: &Topology,
    params: &Params,
    batch: &Matrix,
    target: &Matrix,
    cfg: &FdConfig,
) -> Result<FdGradient> {
    cfg.check()?;
    let count = params.count();
    if count > cfg.max_params {
        return Err(Error::Budget(format!(
            "finite differences over {count} parameters exceed the cap of {}",
            cfg.max_params
        )));
    }
    let relu_layers: Vec<usize> = (1..=topology.depth())
        .filter(|&l| topology.layer(l).activation == Activation::Relu)
        .collect();
    let base = forward(topology, params, batch)?;

    let mut work = params.clone();
    let mut grads = ParamGrads::zeros_like(params);
    let mut kinks = BTreeSet::new();
    let eps = cfg.epsilon;

    for l in 1..=topology.depth() {
        for kind in [ParamKind::Weight, ParamKind::Bias] {
            let (rows, cols) = {
                let m = select(&work, l, kind);
                (m.rows(), m.cols())
            };
            for row in 0..rows {
                for col in 0..cols {
                    let original = select(&work, l, kind).get(row, col);
                    select_mut(&mut work, l, kind).set(row, col, original + eps);
                    let plus = forward(topology, &work, batch)?;
                    select_mut(&mut work, l, kind).set(row, col, original - eps);
                    let minus = forward(topology, &work, batch)?;
                    select_mut(&mut work, l, kind).set(row, col, original);

                    let jp = loss_value(topology.loss(), plus.output(), target)?;
                    let jm = loss_value(topology.loss(), minus.output(), target)?;
                    let g = (jp - jm) / (2.0 * eps);
                    let out = match kind {
                        ParamKind::Weight => &mut grads.weights[l - 1],
                        ParamKind::Bias => &mut grads.biases[l - 1],
                    };
                    out.set(row, col, g);

                    if crosses_kink(&relu_layers, &base, &plus)
                        || crosses_kink(&relu_layers, &base, &minus)
                    {
                        kinks.insert(ParamCoord {
                            layer: l,
                            kind,
                            row,
                            col,
                        });
                    }
                }
            }
        }
    }
    Ok(FdGradient { grads, kinks })
}

fn select(params: &Params, l: usize, kind: ParamKind) -> &Matrix {
    match kind {
        ParamKind::Weight => &params.layers[l - 1].weight,
        ParamKind::Bias => &params.layers[l - 1].bias,
    }
}

fn select_mut(params: &mut Params, l: usize, kind: ParamKind) -> &mut Matrix {
    match kind {
        ParamKind::Weight => &mut params.layers[l - 1].weight,
        ParamKind::Bias => &mut params.layers[l - 1].bias,
    }
}

fn crosses_kink(relu_layers: &[usize], base: &ForwardTrace, other: &ForwardTrace) -> bool {
    relu_layers.iter().any(|&l| {
        base.z(l)
            .as_slice()
            .iter()
            .zip(other.z(l).as_slice())
            .any(|(&a, &b)| (a > 0.0) != (b > 0.0))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradMismatch {
    #[serde(flatten)]
    pub coord: ParamCoord,
    pub analytic: f64,
    pub oracle: f64,
    pub abs_error: f64,
    /// `abs_error / allowed`; above 1 is a failure.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub failures: Vec<GradMismatch>,
    /// The five coordinates with the largest `excess`, failing or not.
    pub worst: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_excess(&self) -> f64 {
        self.worst.first().map_or(0.0, |w| w.excess)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "gradient check: {} checked, {} skipped, {} failed\n",
            self.checked,
            self.skipped,
            self.failures.len()
        );
        for w in &self.worst {
            let _ = writeln!(
                s,
                "  layer {} {:?}[{},{}]: analytic {:e} oracle {:e} (x{:.3} of tolerance)",
                w.coord.layer, w.coord.kind, w.coord.row, w.coord.col, w.analytic, w.oracle, w.excess
            );
        }
        s
    }

    /// One JSON object per failing coordinate.
    pub fn to_jsonl(&self) -> String {
        self.failures
            .iter()
            .map(|f| serde_json::to_string(f).expect("plain data") + "\n")
            .collect()
    }
}

pub fn check_gradients(
    analytic: &ParamGrads,
    oracle: &ParamGrads,
    cfg: &FdConfig,
) -> Result<GradCheckReport> {
    compare(analytic, oracle, cfg, &BTreeSet::new())
}

/// [`check_gradients`] against an FD oracle, skipping its kink coordinates.
pub fn check_against_fd(analytic: &ParamGrads, fd: &FdGradient, cfg: &FdConfig) -> Result<GradCheckReport> {
    compare(analytic, &fd.grads, cfg, &fd.kinks)
}

fn compare(
    analytic: &ParamGrads,
    oracle: &ParamGrads,
    cfg: &FdConfig,
    skip: &BTreeSet<ParamCoord>,
) -> Result<GradCheckReport> {
    cfg.check()?;
    if analytic.depth() != oracle.depth() {
        return Err(Error::Contract(format!(
            "gradient sets have {} and {} layers",
            analytic.depth(),
            oracle.depth()
        )));
    }
    let mut all = Vec::new();
    let mut skipped = 0;
    for l in 1..=analytic.depth() {
        for (kind, a, o) in [
            (ParamKind::Weight, analytic.weight(l), oracle.weight(l)),
            (ParamKind::Bias, analytic.bias(l), oracle.bias(l)),
        ] {
            if a.dims() != o.dims() {
                return Err(Error::shape("check_gradients", a.dims(), o.dims()));
            }
            for row in 0..a.rows() {
                for col in 0..a.cols() {
                    let coord = ParamCoord { layer: l, kind, row, col };
                    if skip.contains(&coord) {
                        skipped += 1;
                        continue;
                    }
                    let (x, y) = (a.get(row, col), o.get(row, col));
                    let abs_error = (x - y).abs();
                    all.push(GradMismatch {
                        coord,
                        analytic: x,
                        oracle: y,
                        abs_error,
                        excess: abs_error / cfg.threshold(x, y),
                    });
                }
            }
        }
    }
    let checked = all.len();
    let failures: Vec<_> = all.iter().filter(|m| m.excess > 1.0 || m.excess.is_nan()).cloned().collect();
    all.sort_by(|a, b| b.excess.total_cmp(&a.excess).then(a.coord.cmp(&b.coord)));
    all.truncate(5);
    Ok(GradCheckReport {
        checked,
        skipped,
        failures,
        worst: all,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct LayerGradientStat {
    pub layer: usize,
    pub signed_mean: f64,
    pub abs_mean: f64,
}

/// Signed and absolute mean over every weight-gradient entry of each layer.
pub fn mean_gradient_profile(grads: &ParamGrads) -> Vec<LayerGradientStat> {
    grads
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let n = w.len().max(1) as f64;
            let (sum, abs_sum) = w
                .as_slice()
                .iter()
                .fold((0.0, 0.0), |(s, a), &v| (s + v, a + v.abs()));
            LayerGradientStat {
                layer: i + 1,
                signed_mean: sum / n,
                abs_mean: abs_sum / n,
            }
        })
        .collect()
}

/// Running average of per-step profiles (e.g. over one epoch).
#[derive(Debug, Clone, Default)]
pub struct ProfileAccumulator {
    sums: Vec<(f64, f64)>,
    count: usize,
}

impl ProfileAccumulator {
    pub fn add(&mut self, profile: &[LayerGradientStat]) {
        if self.sums.is_empty() {
            self.sums = vec![(0.0, 0.0); profile.len()];
        }
        for (acc, stat) in self.sums.iter_mut().zip(profile) {
            acc.0 += stat.signed_mean;
            acc.1 += stat.abs_mean;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Vec<LayerGradientStat> {
        let n = self.count.max(1) as f64;
        self.sums
            .iter()
            .enumerate()
            .map(|(i, &(s, a))| LayerGradientStat {
                layer: i + 1,
                signed_mean: s / n,
                abs_mean: a / n,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScDeltaLayer {
    pub layer: usize,
    pub edges: usize,
    pub weight_discrepancy: f64,
    pub bias_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScDeltaReport {
    pub layers: Vec<ScDeltaLayer>,
    pub max_discrepancy: f64,
    /// Whether the vanilla δ recursion was unchanged by the short circuits.
    pub sensitivities_identical: bool,
}

impl ScDeltaReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.sensitivities_identical && self.max_discrepancy <= tolerance
    }

    pub fn to_jsonl(&self) -> String {
        self.layers
            .iter()
            .map(|l| serde_json::to_string(l).expect("plain data") + "\n")
            .collect()
    }
}

/// Checks `grad_SC[l] − grad_vanilla[l] == Σ λ·a^{l-1}ᵀ δ^{sc}` on one trace.
///
/// Layers without incoming edges must differ by exactly zero.
pub fn sc_delta_check(
    topology: &Topology,
    params: &Params,
    batch: &Matrix,
    target: &Matrix,
) -> Result<ScDeltaReport> {
    let trace = forward(topology, params, batch)?;
    let with_sc = backward(topology, params, &trace, target)?;
    let vanilla = backward(&topology.without_short_circuits(), params, &trace, target)?;

    let mut layers = Vec::with_capacity(topology.depth());
    let mut max_discrepancy: f64 = 0.0;
    for l in 1..=topology.depth() {
        let input_t = trace.a(l - 1).transpose();
        let (rows, cols) = (topology.width(l - 1), topology.width(l));
        let mut expected_w = Matrix::zeros(rows, cols);
        let mut expected_b = Matrix::zeros(1, cols);
        let mut edges = 0;
        for e in topology.edges().iter().filter(|e| e.front == l) {
            let rear = vanilla.sensitivity(e.rear);
            expected_w.axpy(e.weight, &input_t.matmul(rear)?)?;
            expected_b.axpy(e.weight, &rear.column_sums())?;
            edges += 1;
        }
        let diff_w = with_sc.params.weight(l).sub(vanilla.params.weight(l))?;
        let diff_b = with_sc.params.bias(l).sub(vanilla.params.bias(l))?;
        let weight_discrepancy = diff_w.max_abs_diff(&expected_w)?;
        let bias_discrepancy = diff_b.max_abs_diff(&expected_b)?;
        max_discrepancy = max_discrepancy.max(weight_discrepancy).max(bias_discrepancy);
        layers.push(ScDeltaLayer {
            layer: l,
            edges,
            weight_discrepancy,
            bias_discrepancy,
        });
    }
    Ok(ScDeltaReport {
        layers,
        max_discrepancy,
        sensitivities_identical: with_sc.sensitivities == vanilla.sensitivities,
    })
}
