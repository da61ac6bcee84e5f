//! Randomized oracle suites behind `scnet verify`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::activation::Activation;
use crate::data::one_hot;
use crate::engine::{backward, forward};
use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::matrix::Matrix;
use crate::topology::{build, init_weights, LayerSpec, NetworkConfig, Params, ShortCircuitSpec, Topology};
use crate::verify::{check_against_fd, fd_gradient, sc_delta_check, FdConfig};

/// Largest tolerated SC-delta discrepancy (re-association error only).
pub const SC_DELTA_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyScope {
    Fd,
    ScDelta,
    All,
}

impl std::str::FromStr for VerifyScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd" => Ok(VerifyScope::Fd),
            "sc-delta" | "sc_delta" => Ok(VerifyScope::ScDelta),
            "all" => Ok(VerifyScope::All),
            other => Err(Error::Contract(format!(
                "unknown verify scope '{other}' (expected fd, sc-delta or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyBudget {
    pub networks: usize,
    pub max_depth: usize,
    pub max_width: usize,
    pub max_batch: usize,
    pub seed: u64,
    pub fd: FdConfig,
}

impl Default for VerifyBudget {
    fn default() -> Self {
        Self {
            networks: 100,
            max_depth: 4,
            max_width: 8,
            max_batch: 4,
            seed: 0,
            fd: FdConfig::default(),
        }
    }
}

impl VerifyBudget {
    /// Parameter count of the largest network the budget can generate.
    pub fn worst_case_params(&self) -> usize {
        let w = self.max_width;
        self.max_depth * (w * w + w)
    }

    fn check(&self) -> Result<()> {
        if self.networks == 0 || self.max_depth < 2 || self.max_width < 2 || self.max_batch < 1 {
            return Err(Error::Budget(
                "verify needs networks >= 1, depth >= 2, width >= 2 and batch >= 1".into(),
            ));
        }
        let worst = self.worst_case_params();
        if worst > self.fd.max_params {
            return Err(Error::Budget(format!(
                "networks of up to {worst} parameters exceed the finite-difference cap of {}",
                self.fd.max_params
            )));
        }
        Ok(())
    }
}

/// Test hook: perturbs one analytic gradient entry before it is checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultInjection {
    pub network: usize,
    pub delta: f64,
}

/// A network, parameters and one batch with targets.
#[derive(Debug, Clone)]
pub struct Case {
    pub topology: Topology,
    pub params: Params,
    pub batch: Matrix,
    pub target: Matrix,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn finish_case(rng: &mut ChaCha8Rng, config: NetworkConfig, batch_size: usize) -> Result<Case> {
    let topology = build(&config)?;
    let mut params = init_weights(&topology);
    for p in &mut params.layers {
        p.bias = uniform_matrix(rng, 1, p.bias.cols(), -0.5, 0.5);
    }
    let batch = uniform_matrix(rng, batch_size, config.input_width, -1.0, 1.0);
    let out = topology.output_width();
    let target = match config.loss {
        Loss::HalfSquaredError => uniform_matrix(rng, batch_size, out, 0.0, 1.0),
        Loss::SoftmaxCrossEntropy => {
            let labels: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..out)).collect();
            one_hot(&labels, out)?
        }
    };
    Ok(Case {
        topology,
        params,
        batch,
        target,
    })
}

/// Random vanilla network number `index`. The loss and output activation
/// cycle through every combination as `index` increases; hidden activations
/// and residual placement are random.
pub fn random_vanilla_case(budget: &VerifyBudget, index: usize) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let loss = Loss::ALL[index % Loss::ALL.len()];
    let out_activation = Activation::ALL[(index / Loss::ALL.len()) % Activation::ALL.len()];
    let depth = rng.gen_range(2..=budget.max_depth);
    let input_width = rng.gen_range(2..=budget.max_width);
    let mut layers = Vec::with_capacity(depth);
    let mut incoming = input_width;
    for l in 1..=depth {
        let width = rng.gen_range(2..=budget.max_width);
        let activation = if l == depth {
            out_activation
        } else {
            *Activation::ALL.choose(&mut rng).expect("non-empty")
        };
        let residual = width == incoming && rng.gen_bool(0.5);
        layers.push(if residual {
            LayerSpec::residual(width, activation)
        } else {
            LayerSpec::dense(width, activation)
        });
        incoming = width;
    }
    let config = NetworkConfig {
        input_width,
        layers,
        short_circuits: Vec::new(),
        loss,
        seed: rng.gen(),
    };
    let batch = rng.gen_range(1..=budget.max_batch);
    finish_case(&mut rng, config, batch)
}

/// Random network with 1 to 3 short-circuit edges between equal-width layers.
pub fn random_sc_case(budget: &VerifyBudget, index: usize) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(!budget.seed ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let depth = rng.gen_range(3..=budget.max_depth.max(3) + 2);
    let shared = rng.gen_range(2..=budget.max_width);
    let input_width = rng.gen_range(2..=budget.max_width);
    let mut layers = Vec::with_capacity(depth);
    let mut incoming = input_width;
    for l in 1..=depth {
        // Layers 1 and `depth` always share a width, so (1, depth) is a candidate edge.
        let width = if l == 1 || l == depth || rng.gen_bool(0.75) {
            shared
        } else {
            rng.gen_range(2..=budget.max_width)
        };
        let activation = *Activation::ALL.choose(&mut rng).expect("non-empty");
        let residual = width == incoming && rng.gen_bool(0.3);
        layers.push(if residual {
            LayerSpec::residual(width, activation)
        } else {
            LayerSpec::dense(width, activation)
        });
        incoming = width;
    }
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for rear in 2..=depth {
        for front in 1..rear {
            if layers[front - 1].width == layers[rear - 1].width {
                candidates.push((front, rear));
            }
        }
    }
    candidates.shuffle(&mut rng);
    let edge_count = rng.gen_range(1..=3).min(candidates.len());
    let short_circuits = candidates[..edge_count]
        .iter()
        .map(|&(front, rear)| ShortCircuitSpec::explicit(rear, vec![front], rng.gen_range(0.05..1.0)))
        .collect();
    let config = NetworkConfig {
        input_width,
        layers,
        short_circuits,
        loss: Loss::ALL[index % Loss::ALL.len()],
        seed: rng.gen(),
    };
    let batch = rng.gen_range(1..=budget.max_batch);
    finish_case(&mut rng, config, batch)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdCaseResult {
    pub suite: &'static str,
    pub network: usize,
    pub depth: usize,
    pub params: usize,
    pub checked: usize,
    pub skipped: usize,
    pub failures: usize,
    pub max_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScCaseResult {
    pub suite: &'static str,
    pub network: usize,
    pub depth: usize,
    pub edges: usize,
    pub max_discrepancy: f64,
    pub sensitivities_identical: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub fd: Vec<FdCaseResult>,
    pub sc_delta: Vec<ScCaseResult>,
}

impl VerifyReport {
    pub fn fd_failures(&self) -> usize {
        self.fd.iter().map(|c| c.failures).sum()
    }

    pub fn sc_max_discrepancy(&self) -> f64 {
        self.sc_delta.iter().map(|c| c.max_discrepancy).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.fd_failures() == 0
            && self
                .sc_delta
                .iter()
                .all(|c| c.sensitivities_identical && c.max_discrepancy <= SC_DELTA_TOLERANCE)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if !self.fd.is_empty() {
            let checked: usize = self.fd.iter().map(|c| c.checked).sum();
            let skipped: usize = self.fd.iter().map(|c| c.skipped).sum();
            let worst = self.fd.iter().map(|c| c.max_excess).fold(0.0, f64::max);
            let _ = writeln!(
                s,
                "fd: {} networks, {checked} parameters checked, {skipped} skipped at relu kinks, {} failures, worst error {:.3} of tolerance",
                self.fd.len(),
                self.fd_failures(),
                worst
            );
        }
        if !self.sc_delta.is_empty() {
            let contaminated = self.sc_delta.iter().filter(|c| !c.sensitivities_identical).count();
            let _ = writeln!(
                s,
                "sc-delta: {} networks, max discrepancy {:e} (limit {:e}), {contaminated} with altered sensitivities",
                self.sc_delta.len(),
                self.sc_max_discrepancy(),
                SC_DELTA_TOLERANCE
            );
        }
        let _ = writeln!(s, "{}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }

    pub fn to_jsonl(&self) -> String {
        let fd = self.fd.iter().map(|c| serde_json::to_string(c).expect("serializes"));
        let sc = self.sc_delta.iter().map(|c| serde_json::to_string(c).expect("serializes"));
        fd.chain(sc).map(|l| l + "\n").collect()
    }
}

pub fn run_verify(scope: VerifyScope, budget: &VerifyBudget, fault: Option<FaultInjection>) -> Result<VerifyReport> {
    budget.check()?;
    let mut report = VerifyReport::default();
    if matches!(scope, VerifyScope::Fd | VerifyScope::All) {
        for i in 0..budget.networks {
            let case = random_vanilla_case(budget, i)?;
            let trace = forward(&case.topology, &case.params, &case.batch)?;
            let mut analytic = backward(&case.topology, &case.params, &trace, &case.target)?.params;
            if let Some(f) = fault.filter(|f| f.network == i) {
                let v = analytic.weights[0].get(0, 0);
                analytic.weights[0].set(0, 0, v + f.delta);
            }
            let fd = fd_gradient(&case.topology, &case.params, &case.batch, &case.target, &budget.fd)?;
            let check = check_against_fd(&analytic, &fd, &budget.fd)?;
            report.fd.push(FdCaseResult {
                suite: "fd",
                network: i,
                depth: case.topology.depth(),
                params: case.params.count(),
                checked: check.checked,
                skipped: check.skipped,
                failures: check.failures.len(),
                max_excess: check.max_excess(),
            });
        }
    }
    if matches!(scope, VerifyScope::ScDelta | VerifyScope::All) {
        for i in 0..budget.networks {
            let case = random_sc_case(budget, i)?;
            let check = sc_delta_check(&case.topology, &case.params, &case.batch, &case.target)?;
            report.sc_delta.push(ScCaseResult {
                suite: "sc-delta",
                network: i,
                depth: case.topology.depth(),
                edges: case.topology.edges().len(),
                max_discrepancy: check.max_discrepancy,
                sensitivities_identical: check.sensitivities_identical,
            });
        }
    }
    Ok(report)
}
