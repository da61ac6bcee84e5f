//! Forward pass, backward pass with short-circuit injection, and SGD.
//!
//! The backward recursion itself is always the vanilla chain rule:
//! `δ^l = f′(Z^l) ⊙ ∂J/∂a^l`, with `∂J/∂a^{l-1} = δ^l W_lᵀ` plus the identity
//! path for residual layers. Short circuits only change gradient assembly:
//! the weight gradient of a front layer `l` is `a^{l-1}ᵀ (δ^l + Σ λ·δ^{sc})`,
//! where each `δ^{sc}` is the rear layer's sensitivity taken verbatim (the
//! Jacobian across the skipped span is truncated to identity). The injected
//! term never flows further down, so layers below the lowest front layer see
//! exactly the vanilla gradients.

use crate::activation::{activate_derivative, Activation};
use crate::error::{Error, Result};
use crate::loss::{loss_output_sensitivity, loss_value};
use crate::matrix::Matrix;
use crate::topology::{LayerKind, Params, Topology};

/// Cached `Z^l` and `a^l` for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    input: Matrix,
    z: Vec<Matrix>,
    a: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// `Z^l` for 1-based layer `l`.
    pub fn z(&self, l: usize) -> &Matrix {
        &self.z[l - 1]
    }

    /// `a^l`; `a^0` is the input batch.
    pub fn a(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.input
        } else {
            &self.a[l - 1]
        }
    }

    pub fn output(&self) -> &Matrix {
        self.a.last().unwrap_or(&self.input)
    }
}

/// Weight and bias gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl ParamGrads {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            weights: params
                .layers
                .iter()
                .map(|p| Matrix::zeros(p.weight.rows(), p.weight.cols()))
                .collect(),
            biases: params
                .layers
                .iter()
                .map(|p| Matrix::zeros(1, p.bias.cols()))
                .collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Weight gradient of 1-based layer `l`.
    pub fn weight(&self, l: usize) -> &Matrix {
        &self.weights[l - 1]
    }

    pub fn bias(&self, l: usize) -> &Matrix {
        &self.biases[l - 1]
    }
}

/// Everything [`backward`] produces.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    /// Gradients used for the update (including short-circuit terms).
    pub params: ParamGrads,
    /// Vanilla sensitivities `δ^l = ∂J/∂Z^l`, batch x width.
    pub sensitivities: Vec<Matrix>,
    /// `Σ λ·δ^{sc}` added at each front layer, `None` where nothing was injected.
    pub sc_terms: Vec<Option<Matrix>>,
}

impl GradientSet {
    pub fn sensitivity(&self, l: usize) -> &Matrix {
        &self.sensitivities[l - 1]
    }

    pub fn sc_term(&self, l: usize) -> Option<&Matrix> {
        self.sc_terms[l - 1].as_ref()
    }
}

pub fn forward(topology: &Topology, params: &Params, batch: &Matrix) -> Result<ForwardTrace> {
    if batch.cols() != topology.input_width() {
        return Err(Error::Contract(format!(
            "batch has {} columns but the network expects input width {}",
            batch.cols(),
            topology.input_width()
        )));
    }
    check_params(topology, params)?;
    batch.ensure_finite(|| "input batch".to_string())?;

    let depth = topology.depth();
    let mut z = Vec::with_capacity(depth);
    let mut a: Vec<Matrix> = Vec::with_capacity(depth);
    for l in 1..=depth {
        let spec = topology.layer(l);
        let p = params.layer(l);
        let prev = if l == 1 { batch } else { &a[l - 2] };
        let zl = prev.matmul(&p.weight)?.add_row_broadcast(&p.bias)?;
        zl.ensure_finite(|| format!("forward pass at layer {l} (weighted sum)"))?;
        let mut al = zl.map(|v| spec.activation.apply(v));
        if spec.kind == LayerKind::DenseResidual {
            al.add_assign(prev)?;
        }
        al.ensure_finite(|| format!("forward pass at layer {l} (activation)"))?;
        z.push(zl);
        a.push(al);
    }
    Ok(ForwardTrace {
        input: batch.clone(),
        z,
        a,
    })
}

pub fn backward(
    topology: &Topology,
    params: &Params,
    trace: &ForwardTrace,
    target: &Matrix,
) -> Result<GradientSet> {
    let depth = topology.depth();
    check_params(topology, params)?;
    if trace.len() != depth {
        return Err(Error::Contract(format!(
            "trace has {} layers but the network has {depth}",
            trace.len()
        )));
    }
    for l in 1..=depth {
        let expected = (trace.batch_size(), topology.width(l));
        if (trace.z(l).rows(), trace.z(l).cols()) != expected {
            return Err(Error::Contract(format!(
                "trace layer {l} is {} but the network expects {}x{}",
                trace.z(l).dims(),
                expected.0,
                expected.1
            )));
        }
    }
    if target.dims() != trace.output().dims() {
        return Err(Error::shape("backward target", target.dims(), trace.output().dims()));
    }

    let sensitivities = sensitivities(topology, params, trace, target)?;

    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    let mut sc_terms = Vec::with_capacity(depth);
    for l in 1..=depth {
        let mut injected: Option<Matrix> = None;
        // λ = 0 edges are skipped so the degenerate case stays bitwise vanilla.
        for edge in topology.edges_into(l).filter(|e| e.weight != 0.0) {
            let term = sensitivities[edge.rear - 1].scale(edge.weight);
            match injected.as_mut() {
                None => injected = Some(term),
                Some(acc) => acc.add_assign(&term)?,
            }
        }
        let delta = &sensitivities[l - 1];
        let combined;
        let used = match &injected {
            None => delta,
            Some(term) => {
                combined = delta.add(term)?;
                &combined
            }
        };
        let gw = trace.a(l - 1).t_matmul(used)?;
        let gb = used.column_sums();
        if !(gw.is_finite() && gb.is_finite()) {
            return Err(Error::non_finite(format!("gradient at layer {l}")));
        }
        weights.push(gw);
        biases.push(gb);
        sc_terms.push(injected);
    }

    Ok(GradientSet {
        params: ParamGrads { weights, biases },
        sensitivities,
        sc_terms,
    })
}

fn sensitivities(
    topology: &Topology,
    params: &Params,
    trace: &ForwardTrace,
    target: &Matrix,
) -> Result<Vec<Matrix>> {
    let depth = topology.depth();
    let loss = topology.loss();
    let out_spec = topology.layer(depth);
    let mut deltas: Vec<Matrix> = Vec::with_capacity(depth);

    // ∂J/∂a^l, only needed when layer l is residual.
    let mut grad_a = if out_spec.kind == LayerKind::DenseResidual {
        Some(loss.output_gradient(trace.output(), target)?)
    } else {
        None
    };
    let delta_out = loss_output_sensitivity(
        loss,
        trace.output(),
        target,
        trace.z(depth),
        out_spec.activation,
    )?;
    deltas.push(delta_out);

    for l in (1..depth).rev() {
        let upper = &deltas[deltas.len() - 1];
        let mut g = upper.matmul_t(&params.layer(l + 1).weight)?;
        if let Some(skip) = grad_a.take() {
            g.add_assign(&skip)?;
        }
        let spec = topology.layer(l);
        let delta = if spec.activation == Activation::Identity {
            g.clone()
        } else {
            g.hadamard(&activate_derivative(spec.activation, trace.z(l))?)?
        };
        if !delta.is_finite() {
            return Err(Error::non_finite(format!("sensitivity at layer {l}")));
        }
        if spec.kind == LayerKind::DenseResidual {
            grad_a = Some(g);
        }
        deltas.push(delta);
    }
    deltas.reverse();
    Ok(deltas)
}

/// `δ^{sc}` as computed by the vanilla recursion.
pub fn sc_sensitivity(grads: &GradientSet, sc: usize) -> Result<&Matrix> {
    if sc == 0 || sc > grads.sensitivities.len() {
        return Err(Error::Contract(format!(
            "rear layer {sc} is outside 1..={}",
            grads.sensitivities.len()
        )));
    }
    Ok(&grads.sensitivities[sc - 1])
}

/// `W := W − lr·∇W`, `b := b − lr·∇b`. Parameters are left untouched if any
/// updated value would be non-finite.
pub fn sgd_step(params: &mut Params, grads: &ParamGrads, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Contract(format!("learning rate {lr} must be positive")));
    }
    if grads.depth() != params.layers.len() {
        return Err(Error::Contract(format!(
            "gradient set has {} layers but parameters have {}",
            grads.depth(),
            params.layers.len()
        )));
    }
    let mut updated = Vec::with_capacity(params.layers.len());
    for (i, p) in params.layers.iter().enumerate() {
        let mut w = p.weight.clone();
        w.axpy(-lr, &grads.weights[i])?;
        let mut b = p.bias.clone();
        b.axpy(-lr, &grads.biases[i])?;
        if !(w.is_finite() && b.is_finite()) {
            return Err(Error::non_finite(format!("parameter update at layer {}", i + 1)));
        }
        updated.push((w, b));
    }
    for (p, (w, b)) in params.layers.iter_mut().zip(updated) {
        p.weight = w;
        p.bias = b;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Loss before the update.
    pub loss: f64,
    pub grads: GradientSet,
    /// Network output before the update.
    pub prediction: Matrix,
}

/// forward → backward → SGD update.
pub fn train_step(
    topology: &Topology,
    params: &mut Params,
    batch: &Matrix,
    target: &Matrix,
    lr: f64,
) -> Result<StepOutcome> {
    let trace = forward(topology, params, batch)?;
    let loss = loss_value(topology.loss(), trace.output(), target)?;
    let grads = backward(topology, params, &trace, target)?;
    sgd_step(params, &grads.params, lr)?;
    Ok(StepOutcome {
        loss,
        grads,
        prediction: trace.output().clone(),
    })
}

/// Mean loss of the network on `(inputs, targets)`.
pub fn evaluate_loss(topology: &Topology, params: &Params, inputs: &Matrix, targets: &Matrix) -> Result<f64> {
    let trace = forward(topology, params, inputs)?;
    loss_value(topology.loss(), trace.output(), targets)
}

fn check_params(topology: &Topology, params: &Params) -> Result<()> {
    if params.layers.len() != topology.depth() {
        return Err(Error::Contract(format!(
            "parameter set has {} layers but the network has {}",
            params.layers.len(),
            topology.depth()
        )));
    }
    for l in 1..=topology.depth() {
        let p = params.layer(l);
        let (fan_in, fan_out) = (topology.width(l - 1), topology.width(l));
        if p.weight.rows() != fan_in || p.weight.cols() != fan_out || p.bias.rows() != 1 || p.bias.cols() != fan_out {
            return Err(Error::Contract(format!(
                "layer {l} parameters are {} / {} but the network expects {fan_in}x{fan_out} / 1x{fan_out}",
                p.weight.dims(),
                p.bias.dims()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::Loss;
    use crate::topology::{build, init_weights, LayerParams, LayerSpec, NetworkConfig, ShortCircuitSpec};

    fn single_layer(spec: LayerSpec, width: usize) -> Topology {
        build(&NetworkConfig {
            input_width: width,
            layers: vec![spec],
            short_circuits: vec![],
            loss: Loss::HalfSquaredError,
            seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn identity_network_passes_input_through() {
        let topo = single_layer(LayerSpec::dense(3, Activation::Identity), 3);
        let params = Params {
            layers: vec![LayerParams {
                weight: Matrix::identity(3),
                bias: Matrix::zeros(1, 3),
            }],
        };
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 4.0]]);
        assert_eq!(forward(&topo, &params, &x).unwrap().output(), &x);
    }

    #[test]
    fn zero_residual_is_pure_skip() {
        let topo = single_layer(LayerSpec::residual(2, Activation::Relu), 2);
        let params = Params {
            layers: vec![LayerParams {
                weight: Matrix::zeros(2, 2),
                bias: Matrix::zeros(1, 2),
            }],
        };
        let x = Matrix::from_rows(&[[0.3, -0.7]]);
        assert_eq!(forward(&topo, &params, &x).unwrap().output(), &x);
    }

    #[test]
    fn wrong_input_width_is_a_contract_error() {
        let topo = single_layer(LayerSpec::dense(3, Activation::Identity), 3);
        let params = init_weights(&topo);
        assert!(matches!(
            forward(&topo, &params, &Matrix::zeros(1, 2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn non_finite_forward_names_layer() {
        let topo = single_layer(LayerSpec::dense(1, Activation::Identity), 1);
        let params = Params {
            layers: vec![LayerParams {
                weight: Matrix::from_rows(&[[1e308]]),
                bias: Matrix::zeros(1, 1),
            }],
        };
        let err = forward(&topo, &params, &Matrix::from_rows(&[[1e10]])).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn sgd_zero_gradient_and_unit_rate() {
        let topo = single_layer(LayerSpec::dense(2, Activation::Tanh), 2);
        let mut params = init_weights(&topo);
        let before = params.clone();
        sgd_step(&mut params, &ParamGrads::zeros_like(&before), 0.5).unwrap();
        assert_eq!(params, before);

        let mut grads = ParamGrads::zeros_like(&before);
        grads.weights[0] = Matrix::from_rows(&[[0.25, -0.5], [1.0, 2.0]]);
        sgd_step(&mut params, &grads, 1.0).unwrap();
        let expected = before.layers[0].weight.sub(&grads.weights[0]).unwrap();
        assert_eq!(params.layers[0].weight, expected);
    }

    #[test]
    fn sgd_rejects_bad_rate_and_non_finite_updates() {
        let topo = single_layer(LayerSpec::dense(1, Activation::Identity), 1);
        let mut params = init_weights(&topo);
        let grads = ParamGrads::zeros_like(&params);
        assert!(sgd_step(&mut params, &grads, 0.0).is_err());
        let mut huge = grads.clone();
        huge.weights[0] = Matrix::from_rows(&[[f64::MAX]]);
        let before = params.clone();
        assert!(sgd_step(&mut params, &huge, 1e300).is_err());
        assert_eq!(params, before);
    }

    #[test]
    fn sc_sensitivity_at_output_is_loss_sensitivity() {
        let topo = build(&NetworkConfig {
            input_width: 2,
            layers: vec![
                LayerSpec::dense(3, Activation::Sigmoid),
                LayerSpec::dense(3, Activation::Sigmoid),
            ],
            short_circuits: vec![ShortCircuitSpec::explicit(2, vec![1], 0.2)],
            loss: Loss::HalfSquaredError,
            seed: 4,
        })
        .unwrap();
        let params = init_weights(&topo);
        let x = Matrix::from_rows(&[[0.1, 0.9], [0.5, 0.2]]);
        let d = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let trace = forward(&topo, &params, &x).unwrap();
        let grads = backward(&topo, &params, &trace, &d).unwrap();
        let expected = loss_output_sensitivity(
            Loss::HalfSquaredError,
            trace.output(),
            &d,
            trace.z(2),
            Activation::Sigmoid,
        )
        .unwrap();
        assert_eq!(sc_sensitivity(&grads, 2).unwrap(), &expected);
        assert!(sc_sensitivity(&grads, 3).is_err());
        assert!(sc_sensitivity(&grads, 0).is_err());
    }
}
