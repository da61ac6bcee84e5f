//! Acceptance criteria 1–10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! MNIST is read from `$SCNET_MNIST_DIR`, or `<workspace>/data/mnist`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use scnet::engine::sc_sensitivity;
use scnet::experiment::run::metrics_jsonl;
use scnet::experiment::suite::{random_sc_case, random_vanilla_case, SC_DELTA_TOLERANCE};
use scnet::experiment::{
    load_data, run_experiment, run_pair, run_verify, train_run, DataConfig, DataSplit, ExperimentConfig, VerifyBudget,
    VerifyScope,
};
use scnet::topology::build;
use scnet::verify::sc_delta_check;
use scnet::{
    backward, forward, init_weights, Activation, Error, LayerSpec, Loss, Matrix, NetworkConfig, ShortCircuitSpec,
    Topology,
};

type Outcome = Result<String, String>;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("SCNET_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data/mnist"))
}

fn scratch() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("temp dir")).path()
}

/// A preset with its output redirected to scratch space and MNIST paths
/// pointed at [`mnist_dir`].
fn preset(name: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(workspace().join("configs").join(format!("{name}.toml")))
        .unwrap_or_else(|e| panic!("preset {name}: {e}"));
    cfg.output_dir = scratch().join(name);
    if let DataConfig::Mnist {
        train_images,
        train_labels,
        test_images,
        test_labels,
        ..
    } = &mut cfg.data
    {
        let dir = mnist_dir();
        *train_images = dir.join("train-images-idx3-ubyte");
        *train_labels = dir.join("train-labels-idx1-ubyte");
        *test_images = dir.join("t10k-images-idx3-ubyte");
        *test_labels = dir.join("t10k-labels-idx1-ubyte");
    }
    cfg
}

fn mnist() -> &'static DataSplit {
    static DATA: OnceLock<DataSplit> = OnceLock::new();
    DATA.get_or_init(|| {
        load_data(&preset("fcn-mnist-baseline")).unwrap_or_else(|e| {
            panic!(
                "MNIST not found under {} ({e}); set SCNET_MNIST_DIR to the directory holding the four IDX files",
                mnist_dir().display()
            )
        })
    })
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fmt_err(e: Error) -> String {
    e.to_string()
}

fn criterion_1() -> Outcome {
    let budget = VerifyBudget::default();
    let mut combos = BTreeSet::new();
    let mut activations = BTreeSet::new();
    for i in 0..budget.networks {
        let case = random_vanilla_case(&budget, i).map_err(fmt_err)?;
        let topo = &case.topology;
        ensure((2..=4).contains(&topo.depth()), format!("network {i} has depth {}", topo.depth()))?;
        ensure(
            (1..=topo.depth()).all(|l| (2..=8).contains(&topo.width(l))) && (1..=4).contains(&case.batch.rows()),
            format!("network {i} is outside the size budget"),
        )?;
        combos.insert((format!("{:?}", topo.loss()), format!("{:?}", topo.layer(topo.depth()).activation)));
        activations.extend(topo.layers().iter().map(|l| format!("{:?}", l.activation)));
    }
    ensure(combos.len() == Loss::ALL.len() * Activation::ALL.len(), format!("only {} loss/activation combinations", combos.len()))?;
    ensure(activations.len() == Activation::ALL.len(), "not every activation used")?;
    let start = Instant::now();
    let report = run_verify(VerifyScope::Fd, &budget, None).map_err(fmt_err)?;
    let elapsed = start.elapsed();
    let checked: usize = report.fd.iter().map(|c| c.checked).sum();
    ensure(report.fd.len() >= 100, "fewer than 100 networks")?;
    ensure(report.fd_failures() == 0, format!("{} gradient entries outside tolerance", report.fd_failures()))?;
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} networks, {checked} entries within max(1e-5 rel, 1e-8 abs), {:.2?}",
        report.fd.len(),
        elapsed
    ))
}

/// Trains `cfg` and its copy with every short-circuit weight set to 0 and
/// without short circuits; all serialized outputs must match.
fn degeneracy(mut cfg: ExperimentConfig, epochs: usize) -> Result<usize, String> {
    cfg.train.epochs = epochs;
    let data = load_data(&cfg).map_err(fmt_err)?;
    let mut zero = cfg.clone();
    if zero.network.short_circuits.is_empty() {
        let depth = zero.network.layers.len();
        let width = zero.network.layers[depth - 2].width;
        let fronts: Vec<usize> = (1..depth - 1).filter(|&l| zero.network.layers[l - 1].width == width).collect();
        zero.network.short_circuits = vec![ShortCircuitSpec::explicit(depth - 1, fronts, 0.0)];
    }
    for sc in &mut zero.network.short_circuits {
        sc.weight = 0.0;
    }
    let mut plain = cfg.clone();
    plain.network.short_circuits.clear();
    ensure(!build(&zero.network).map_err(fmt_err)?.edges().is_empty(), "no zero-weight edges to test")?;
    let a = train_run(&plain, &data).map_err(fmt_err)?;
    let b = train_run(&zero, &data).map_err(fmt_err)?;
    let bytes = |s: &scnet::experiment::RunSummary| {
        (metrics_jsonl(&s.records), serde_json::to_string(&s.params).expect("params serialize"))
    };
    ensure(bytes(&a) == bytes(&b), "λ=0 trajectory differs from the plain network")?;
    Ok(a.records.len())
}

fn criterion_2() -> Outcome {
    let epochs = degeneracy(preset("resmlp-sc"), 10)?;
    Ok(format!("λ=0 and no-SC runs byte-identical over {epochs} epochs on synth blobs"))
}

fn criterion_3() -> Outcome {
    let budget = VerifyBudget::default();
    let start = Instant::now();
    let report = run_verify(VerifyScope::ScDelta, &budget, None).map_err(fmt_err)?;
    let edges: BTreeSet<usize> = (0..budget.networks)
        .map(|i| random_sc_case(&budget, i).map(|c| c.topology.edges().len()))
        .collect::<Result<_, _>>()
        .map_err(fmt_err)?;
    ensure(edges.iter().all(|e| (1..=3).contains(e)), format!("edge counts {edges:?}"))?;
    ensure(
        report.sc_max_discrepancy() <= SC_DELTA_TOLERANCE,
        format!("max discrepancy {:e}", report.sc_max_discrepancy()),
    )?;
    ensure(report.passed(), "sensitivities altered by short circuits")?;
    Ok(format!(
        "{} topologies with {:?} edges, max discrepancy {:e} ≤ 1e-12, {:.2?}",
        report.sc_delta.len(),
        edges,
        report.sc_max_discrepancy(),
        start.elapsed()
    ))
}

fn identity_chain(sc: Vec<ShortCircuitSpec>) -> Topology {
    build(&NetworkConfig {
        input_width: 3,
        layers: vec![LayerSpec::dense(3, Activation::Identity); 8],
        short_circuits: sc,
        loss: Loss::HalfSquaredError,
        seed: 0,
    })
    .expect("valid chain")
}

/// The injected term at every front equals Σ λ·δ^{rear} bit for bit.
fn injected_terms_exact(topo: &Topology, grads: &scnet::GradientSet) -> Result<(), String> {
    for front in 1..=topo.depth() {
        let mut expected: Option<Matrix> = None;
        for e in topo.edges_into(front).filter(|e| e.weight != 0.0) {
            let term = sc_sensitivity(grads, e.rear).map_err(fmt_err)?.scale(e.weight);
            expected = Some(match expected {
                None => term,
                Some(acc) => acc.add(&term).map_err(fmt_err)?,
            });
        }
        ensure(grads.sc_term(front) == expected.as_ref(), format!("injected term at layer {front} differs"))?;
    }
    Ok(())
}

fn criterion_4() -> Outcome {
    let sc = identity_chain(vec![ShortCircuitSpec::explicit(8, vec![2], 1.0)]);
    let van = sc.without_short_circuits();
    let mut params = init_weights(&sc);
    for p in &mut params.layers {
        p.weight = Matrix::identity(3);
    }
    let x = Matrix::from_rows(&[[0.3, -0.7, 1.1], [0.05, 0.4, -0.2]]);
    let d = Matrix::from_rows(&[[1.0, 0.0, -1.0], [0.5, 0.5, 0.5]]);
    let trace = forward(&sc, &params, &x).map_err(fmt_err)?;
    let g_sc = backward(&sc, &params, &trace, &d).map_err(fmt_err)?;
    let g_van = backward(&van, &params, &trace, &d).map_err(fmt_err)?;
    let delta_sc = sc_sensitivity(&g_sc, 8).map_err(fmt_err)?;
    ensure(g_sc.sc_term(2) == Some(delta_sc), "SC term at the front is not δ^{sc}")?;
    // Identity Jacobians: every δ equals the output sensitivity.
    ensure((1..=8).all(|l| g_sc.sensitivity(l) == delta_sc), "δ not constant along the chain")?;
    ensure(
        *g_sc.params.weight(2) == g_van.params.weight(2).scale(2.0),
        "front gradient is not a^{l-1}ᵀ(δ^l + δ^{sc})",
    )?;
    injected_terms_exact(&sc, &g_sc)?;
    Ok("8-layer identity chain: SC term at front layer 2 equals δ^8 bitwise".into())
}

/// Layers strictly below the lowest front must be bitwise unchanged.
fn non_contaminated(topo: &Topology, params: &scnet::Params, x: &Matrix, d: &Matrix) -> Result<usize, String> {
    let trace = forward(topo, params, x).map_err(fmt_err)?;
    let g_sc = backward(topo, params, &trace, d).map_err(fmt_err)?;
    let g_van = backward(&topo.without_short_circuits(), params, &trace, d).map_err(fmt_err)?;
    let lowest = topo.edges().iter().map(|e| e.front).min().unwrap_or(topo.depth() + 1);
    for l in 1..lowest {
        ensure(
            g_sc.params.weight(l) == g_van.params.weight(l) && g_sc.params.bias(l) == g_van.params.bias(l),
            format!("layer {l} below front {lowest} changed"),
        )?;
    }
    ensure(g_sc.sensitivities == g_van.sensitivities, "δ recursion changed")?;
    Ok(lowest - 1)
}

fn criterion_5() -> Outcome {
    let budget = VerifyBudget::default();
    let mut compared = 0;
    for i in 0..budget.networks {
        let case = random_sc_case(&budget, i).map_err(fmt_err)?;
        compared += non_contaminated(&case.topology, &case.params, &case.batch, &case.target)?;
    }
    Ok(format!("{compared} layers below the lowest front bitwise equal across {} networks", budget.networks))
}

fn criterion_6() -> Outcome {
    let data = mnist();
    let mut base = preset("fcn-mnist-baseline");
    let mut sc = preset("fcn-mnist-sc");
    base.train.epochs = 1;
    sc.train.epochs = 1;
    ensure(base.network.seed == sc.network.seed, "presets use different seeds")?;
    ensure(base.network.layers.len() == 5, "baseline is not a 5-layer network")?;
    let start = Instant::now();
    let rb = train_run(&base, data).map_err(fmt_err)?;
    let rs = train_run(&sc, data).map_err(fmt_err)?;
    let elapsed = start.elapsed();
    let gb = rb.records[0].mean_gradients.as_ref().ok_or("baseline recorded no gradients")?;
    let gs = rs.records[0].mean_gradients.as_ref().ok_or("SC run recorded no gradients")?;
    let ratio = gb[3].abs_mean / gb[0].abs_mean;
    ensure(ratio >= 10.0, format!("layer 4 / layer 1 = {ratio:.2}"))?;
    ensure(
        gs[1].abs_mean > gb[1].abs_mean,
        format!("SC layer 2 {:.3e} ≤ baseline {:.3e}", gs[1].abs_mean, gb[1].abs_mean),
    )?;
    ensure(elapsed < Duration::from_secs(300), format!("took {elapsed:?}"))?;
    Ok(format!(
        "epoch 1: layer1 {:.2e} vs layer4 {:.2e} ({ratio:.0}x); layer 2 SC {:.2e} > baseline {:.2e}; {:.1?}",
        gb[0].abs_mean, gb[3].abs_mean, gs[1].abs_mean, gb[1].abs_mean, elapsed
    ))
}

fn criterion_7() -> Outcome {
    let _ = mnist();
    let base = preset("fcn-mnist-baseline");
    let sc = preset("fcn-mnist-sc");
    ensure(base.train.epochs == 10 && sc.train.epochs == 10, "presets are not 10-epoch runs")?;
    let report = run_pair(&base, &sc, &scratch().join("pair-fcn")).map_err(fmt_err)?;
    ensure(report.step0_forward_identical, "step-0 forward outputs differ")?;
    ensure(
        report.b_final_train_loss <= report.a_final_train_loss,
        format!(
            "SC final train loss {:.6} > baseline {:.6}",
            report.b_final_train_loss, report.a_final_train_loss
        ),
    )?;
    Ok(format!(
        "10 epochs: SC train loss {:.6} ≤ baseline {:.6}",
        report.b_final_train_loss, report.a_final_train_loss
    ))
}

fn criterion_8() -> Outcome {
    let sc = preset("resmlp-sc");
    let base = preset("resmlp-baseline");
    let topo = build(&sc.network).map_err(fmt_err)?;
    let fronts: Vec<usize> = topo.edges().iter().map(|e| e.front).collect();
    ensure(
        sc.network.short_circuits.iter().all(|s| s.skip_gap == Some(4)),
        "short circuits not in k-gap form with k=4",
    )?;
    let data = load_data(&sc).map_err(fmt_err)?;
    let rb = train_run(&base, &data).map_err(fmt_err)?;
    let rs = train_run(&sc, &data).map_err(fmt_err)?;
    ensure(rs.records.len() == 5, "did not train 5 epochs")?;
    ensure(rb.last().train_accuracy >= 0.95, format!("baseline oracle at {}", rb.last().train_accuracy))?;
    ensure(rs.last().train_accuracy >= 0.95, format!("SC run at {}", rs.last().train_accuracy))?;

    // Criteria 2–5 on this topology.
    degeneracy(sc.clone(), 10)?;
    let params = init_weights(&topo);
    let batch = data.train.inputs.slice_rows(0, 32);
    let target = data.train.targets.slice_rows(0, 32);
    let check = sc_delta_check(&topo, &params, &batch, &target).map_err(fmt_err)?;
    ensure(check.passed(SC_DELTA_TOLERANCE), format!("SC-delta discrepancy {:e}", check.max_discrepancy))?;
    let trained = &rs.params;
    for p in [&params, trained] {
        let trace = forward(&topo, p, &batch).map_err(fmt_err)?;
        injected_terms_exact(&topo, &backward(&topo, p, &trace, &target).map_err(fmt_err)?)?;
        non_contaminated(&topo, p, &batch, &target)?;
    }
    Ok(format!(
        "fronts {fronts:?}; train accuracy SC {:.3}, baseline oracle {:.3}; criteria 2-5 hold",
        rs.last().train_accuracy,
        rb.last().train_accuracy
    ))
}

fn criterion_9() -> Outcome {
    let mut checked = Vec::new();
    for name in ["resmlp-baseline", "resmlp-sc", "fcn-mnist-baseline", "fcn-mnist-sc"] {
        let cfg = preset(name);
        let path = cfg.output_dir.join("metrics.jsonl");
        // The MNIST presets were already written by criterion 7.
        if !path.exists() {
            run_experiment(&cfg).map_err(fmt_err)?;
        }
        let first = std::fs::read(&path).map_err(|e| e.to_string())?;
        run_experiment(&cfg).map_err(fmt_err)?;
        let second = std::fs::read(&path).map_err(|e| e.to_string())?;
        ensure(first == second, format!("{name}: metrics.jsonl differs on re-run"))?;
        checked.push(name);
    }
    Ok(format!("metrics.jsonl byte-identical on re-run for {}", checked.join(", ")))
}

fn criterion_10() -> Outcome {
    let data = mnist();
    ensure(data.train.len() == 60_000, format!("{} training images", data.train.len()))?;
    ensure(data.test.len() == 10_000, format!("{} test images", data.test.len()))?;
    ensure(data.train.features() == 784, "images are not 28x28")?;
    let mut bytes = std::fs::read(mnist_dir().join("t10k-images-idx3-ubyte")).map_err(|e| e.to_string())?;
    bytes[2] ^= 0xff;
    let fixture = scratch().join("corrupted-images-idx3-ubyte");
    std::fs::write(&fixture, &bytes).map_err(|e| e.to_string())?;
    let err = scnet::data::load_mnist_idx(&fixture, mnist_dir().join("t10k-labels-idx1-ubyte"))
        .err()
        .ok_or("corrupted magic accepted")?;
    ensure(matches!(err, Error::Parse { offset: 0, .. }), format!("unexpected error: {err}"))?;
    let msg = err.to_string();
    ensure(msg.contains("offset 0"), format!("message does not name the offset: {msg}"))?;
    Ok(format!("60000/10000 loaded; corrupted magic rejected: {msg}"))
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (n, run) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {n}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL ({why})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
