//! Declarative network description and short-circuit resolution.
//!
//! Layers are numbered from 1. Layer `l` owns the weight matrix that maps
//! `a^{l-1}` (with `a^0` the input batch) to its weighted sum `Z^l`, so a
//! layer's `width` is the number of neurons it produces. A short circuit with
//! rear layer `sc` and front layer `l` adds `λ·δ^{sc}` to the sensitivity used
//! for layer `l`'s own weight gradient, which is why the two endpoints must
//! have the same width.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::matrix::Matrix;

pub const DEFAULT_SC_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    /// `a^l = f(Z^l) + a^{l-1}`; needs an incoming width equal to its own.
    DenseResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(width: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense,
            width,
            activation,
        }
    }

    pub fn residual(width: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::DenseResidual,
            width,
            activation,
        }
    }
}

/// A short circuit from one rear layer to a set of front layers.
///
/// Exactly one of `front_layers` and `skip_gap` must be given. The struct
/// keeps both as options so that malformed input still reaches [`validate`]
/// and gets reported alongside every other violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortCircuitSpec {
    pub rear: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub front_layers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_gap: Option<usize>,
    #[serde(default = "default_sc_weight")]
    pub weight: f64,
}

fn default_sc_weight() -> f64 {
    DEFAULT_SC_WEIGHT
}

impl ShortCircuitSpec {
    pub fn explicit(rear: usize, front_layers: Vec<usize>, weight: f64) -> Self {
        Self {
            rear,
            front_layers: Some(front_layers),
            skip_gap: None,
            weight,
        }
    }

    pub fn gap(rear: usize, skip_gap: usize, weight: f64) -> Self {
        Self {
            rear,
            front_layers: None,
            skip_gap: Some(skip_gap),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub short_circuits: Vec<ShortCircuitSpec>,
    pub loss: Loss,
    #[serde(default)]
    pub seed: u64,
}

/// One resolved short-circuit edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScEdge {
    pub front: usize,
    pub rear: usize,
    pub weight: f64,
}

/// A single structural problem found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoLayers,
    ZeroInputWidth,
    ZeroWidth { layer: usize },
    ResidualWidth { layer: usize, incoming: usize, width: usize },
    RearOutOfRange { circuit: usize, rear: usize, layers: usize },
    FrontOutOfRange { circuit: usize, front: usize, layers: usize },
    FrontNotBeforeRear { circuit: usize, front: usize, rear: usize },
    WidthMismatch { circuit: usize, front: usize, front_width: usize, rear: usize, rear_width: usize },
    BadWeight { circuit: usize, weight: f64 },
    FrontForm { circuit: usize },
    ZeroSkipGap { circuit: usize },
    DuplicateEdge { front: usize, rear: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoLayers => write!(f, "network has no layers"),
            Violation::ZeroInputWidth => write!(f, "input width must be at least 1"),
            Violation::ZeroWidth { layer } => write!(f, "layer {layer}: width must be at least 1"),
            Violation::ResidualWidth { layer, incoming, width } => write!(
                f,
                "layer {layer}: residual layer needs incoming width {incoming} to equal its width {width}"
            ),
            Violation::RearOutOfRange { circuit, rear, layers } => write!(
                f,
                "short circuit {circuit}: rear layer {rear} is outside 1..={layers}"
            ),
            Violation::FrontOutOfRange { circuit, front, layers } => write!(
                f,
                "short circuit {circuit}: front layer {front} is outside 1..={layers}"
            ),
            Violation::FrontNotBeforeRear { circuit, front, rear } => write!(
                f,
                "short circuit {circuit}: front layer {front} must be below rear layer {rear}"
            ),
            Violation::WidthMismatch { circuit, front, front_width, rear, rear_width } => write!(
                f,
                "short circuit {circuit}: front layer {front} has width {front_width} but rear layer {rear} has width {rear_width}"
            ),
            Violation::BadWeight { circuit, weight } => write!(
                f,
                "short circuit {circuit}: weight {weight} must be finite and non-negative"
            ),
            Violation::FrontForm { circuit } => write!(
                f,
                "short circuit {circuit}: give exactly one of front_layers or skip_gap"
            ),
            Violation::ZeroSkipGap { circuit } => {
                write!(f, "short circuit {circuit}: skip_gap must be at least 1")
            }
            Violation::DuplicateEdge { front, rear } => {
                write!(f, "duplicate short-circuit edge {rear} -> {front}")
            }
        }
    }
}

/// Layers receiving a short circuit from `sc` under skip gap `k`:
/// `{ l in 1..=total_layers : l mod k == 0 and l < sc }`.
pub fn plan_sc_layers(total_layers: usize, sc: usize, k: usize) -> Result<BTreeSet<usize>> {
    if k == 0 {
        return Err(Error::Contract("skip gap must be at least 1".into()));
    }
    if sc == 0 || sc > total_layers {
        return Err(Error::Contract(format!(
            "rear layer {sc} is outside 1..={total_layers}"
        )));
    }
    Ok((1..=total_layers).filter(|l| l % k == 0 && *l < sc).collect())
}

/// A network configuration that passed [`validate`], with its short circuits
/// expanded into explicit edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    config: NetworkConfig,
    edges: Vec<ScEdge>,
}

impl Topology {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn input_width(&self) -> usize {
        self.config.input_width
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.config.layers
    }

    pub fn depth(&self) -> usize {
        self.config.layers.len()
    }

    /// Layer `l` (1-based).
    pub fn layer(&self, l: usize) -> &LayerSpec {
        &self.config.layers[l - 1]
    }

    pub fn output_width(&self) -> usize {
        self.config.layers.last().map_or(0, |l| l.width)
    }

    /// Width of `a^l`; `l == 0` is the input.
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            self.config.input_width
        } else {
            self.config.layers[l - 1].width
        }
    }

    pub fn loss(&self) -> Loss {
        self.config.loss
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Resolved edges, ordered by `(front, rear)`.
    pub fn edges(&self) -> &[ScEdge] {
        &self.edges
    }

    pub fn edges_into(&self, front: usize) -> impl Iterator<Item = &ScEdge> {
        self.edges.iter().filter(move |e| e.front == front)
    }

    /// Same network with every short circuit removed.
    pub fn without_short_circuits(&self) -> Topology {
        let mut config = self.config.clone();
        config.short_circuits.clear();
        Topology {
            config,
            edges: Vec::new(),
        }
    }

    /// The configuration with each edge written out as its own explicit
    /// single-front short circuit.
    pub fn resolved_config(&self) -> NetworkConfig {
        let mut config = self.config.clone();
        config.short_circuits = self
            .edges
            .iter()
            .map(|e| ShortCircuitSpec::explicit(e.rear, vec![e.front], e.weight))
            .collect();
        config
    }
}

/// Checks every structural precondition and expands short circuits.
///
/// Either returns a complete [`Topology`] or the full list of violations.
pub fn validate(config: &NetworkConfig) -> std::result::Result<Topology, Vec<Violation>> {
    let mut violations = Vec::new();
    let depth = config.layers.len();

    if depth == 0 {
        violations.push(Violation::NoLayers);
    }
    if config.input_width == 0 {
        violations.push(Violation::ZeroInputWidth);
    }
    let mut incoming = config.input_width;
    for (i, layer) in config.layers.iter().enumerate() {
        let l = i + 1;
        if layer.width == 0 {
            violations.push(Violation::ZeroWidth { layer: l });
        }
        if layer.kind == LayerKind::DenseResidual && incoming != layer.width {
            violations.push(Violation::ResidualWidth {
                layer: l,
                incoming,
                width: layer.width,
            });
        }
        incoming = layer.width;
    }

    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, sc) in config.short_circuits.iter().enumerate() {
        let circuit = i + 1;
        if !(sc.weight.is_finite() && sc.weight >= 0.0) {
            violations.push(Violation::BadWeight {
                circuit,
                weight: sc.weight,
            });
        }
        let rear_ok = sc.rear >= 1 && sc.rear <= depth;
        if !rear_ok {
            violations.push(Violation::RearOutOfRange {
                circuit,
                rear: sc.rear,
                layers: depth,
            });
        }
        let fronts: Vec<usize> = match (&sc.front_layers, sc.skip_gap) {
            (Some(list), None) => list.clone(),
            (None, Some(0)) => {
                violations.push(Violation::ZeroSkipGap { circuit });
                continue;
            }
            (None, Some(k)) => {
                if !rear_ok {
                    continue;
                }
                (1..=depth).filter(|l| l % k == 0 && *l < sc.rear).collect()
            }
            _ => {
                violations.push(Violation::FrontForm { circuit });
                continue;
            }
        };
        for front in fronts {
            if front == 0 || front > depth {
                violations.push(Violation::FrontOutOfRange {
                    circuit,
                    front,
                    layers: depth,
                });
                continue;
            }
            if !rear_ok {
                continue;
            }
            if front >= sc.rear {
                violations.push(Violation::FrontNotBeforeRear {
                    circuit,
                    front,
                    rear: sc.rear,
                });
                continue;
            }
            let front_width = config.layers[front - 1].width;
            let rear_width = config.layers[sc.rear - 1].width;
            if front_width != rear_width {
                violations.push(Violation::WidthMismatch {
                    circuit,
                    front,
                    front_width,
                    rear: sc.rear,
                    rear_width,
                });
                continue;
            }
            if !seen.insert((front, sc.rear)) {
                violations.push(Violation::DuplicateEdge {
                    front,
                    rear: sc.rear,
                });
                continue;
            }
            edges.push(ScEdge {
                front,
                rear: sc.rear,
                weight: sc.weight,
            });
        }
    }

    if !violations.is_empty() {
        return Err(violations);
    }
    edges.sort_by_key(|e| (e.front, e.rear));
    Ok(Topology {
        config: config.clone(),
        edges,
    })
}

/// Like [`validate`], folding violations into [`Error::Config`].
pub fn build(config: &NetworkConfig) -> Result<Topology> {
    validate(config).map_err(Error::Config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `in_width x width`.
    pub weight: Matrix,
    /// `1 x width`.
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn layer(&self, l: usize) -> &LayerParams {
        &self.layers[l - 1]
    }

    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }
}

/// Half-width of the uniform initializer for a `fan_in -> fan_out` layer.
pub fn init_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
///
/// Draws come from ChaCha8 seeded with `topology.seed()`, layer by layer in
/// row-major order, so a seed pins the parameters exactly.
pub fn init_weights(topology: &Topology) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(topology.seed());
    let layers = (1..=topology.depth())
        .map(|l| {
            let fan_in = topology.width(l - 1);
            let fan_out = topology.width(l);
            let limit = init_limit(fan_in, fan_out);
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            LayerParams {
                weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized by construction"),
                bias: Matrix::zeros(1, fan_out),
            }
        })
        .collect();
    Params { layers }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fcn(short_circuits: Vec<ShortCircuitSpec>) -> NetworkConfig {
        NetworkConfig {
            input_width: 784,
            layers: [64, 64, 64, 64]
                .iter()
                .map(|&w| LayerSpec::dense(w, Activation::Sigmoid))
                .chain(std::iter::once(LayerSpec::dense(10, Activation::Identity)))
                .collect(),
            short_circuits,
            loss: Loss::SoftmaxCrossEntropy,
            seed: 0,
        }
    }

    #[test]
    fn plan_examples() {
        assert_eq!(plan_sc_layers(5, 4, 2).unwrap(), BTreeSet::from([2]));
        assert_eq!(plan_sc_layers(12, 12, 4).unwrap(), BTreeSet::from([4, 8]));
        assert!(plan_sc_layers(5, 1, 1).unwrap().is_empty());
    }

    #[test]
    fn plan_rejects_bad_arguments() {
        assert!(plan_sc_layers(5, 4, 0).is_err());
        assert!(plan_sc_layers(5, 0, 1).is_err());
        assert!(plan_sc_layers(5, 6, 1).is_err());
    }

    #[test]
    fn fcn_preset_circuit_is_valid() {
        let topo = validate(&fcn(vec![ShortCircuitSpec::explicit(4, vec![2], 0.2)])).unwrap();
        assert_eq!(
            topo.edges(),
            &[ScEdge {
                front: 2,
                rear: 4,
                weight: 0.2
            }]
        );
    }

    #[test]
    fn front_above_rear_is_rejected() {
        let errs = validate(&fcn(vec![ShortCircuitSpec::explicit(2, vec![4], 0.2)])).unwrap_err();
        assert_eq!(
            errs,
            vec![Violation::FrontNotBeforeRear {
                circuit: 1,
                front: 4,
                rear: 2
            }]
        );
    }

    #[test]
    fn dangling_front_is_named() {
        let mut cfg = fcn(vec![ShortCircuitSpec::explicit(4, vec![9], 0.2)]);
        cfg.layers.truncate(5);
        let errs = validate(&cfg).unwrap_err();
        assert!(errs[0].to_string().contains("front layer 9"), "{}", errs[0]);
    }

    #[test]
    fn width_mismatch_and_duplicates_are_all_reported() {
        let errs = validate(&fcn(vec![
            ShortCircuitSpec::explicit(5, vec![2], 0.2),
            ShortCircuitSpec::explicit(4, vec![2, 2], 0.2),
        ]))
        .unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
        assert!(matches!(errs[0], Violation::WidthMismatch { front: 2, rear: 5, .. }));
        assert!(matches!(errs[1], Violation::DuplicateEdge { front: 2, rear: 4 }));
    }

    #[test]
    fn residual_width_is_checked() {
        let cfg = NetworkConfig {
            input_width: 3,
            layers: vec![LayerSpec::residual(4, Activation::Relu)],
            short_circuits: vec![],
            loss: Loss::HalfSquaredError,
            seed: 0,
        };
        assert!(matches!(
            validate(&cfg).unwrap_err()[0],
            Violation::ResidualWidth { layer: 1, incoming: 3, width: 4 }
        ));
    }

    #[test]
    fn front_form_must_be_exclusive() {
        let mut sc = ShortCircuitSpec::gap(4, 2, 0.2);
        sc.front_layers = Some(vec![2]);
        let errs = validate(&fcn(vec![sc, ShortCircuitSpec::gap(4, 0, 0.2)])).unwrap_err();
        assert_eq!(
            errs,
            vec![
                Violation::FrontForm { circuit: 1 },
                Violation::ZeroSkipGap { circuit: 2 }
            ]
        );
    }

    #[test]
    fn skip_gap_expands_like_plan() {
        let topo = validate(&fcn(vec![ShortCircuitSpec::gap(4, 1, 0.5)])).unwrap();
        let fronts: Vec<_> = topo.edges().iter().map(|e| e.front).collect();
        assert_eq!(fronts, vec![1, 2, 3]);
        assert!(topo.edges().iter().all(|e| e.rear == 4 && e.weight == 0.5));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let topo = validate(&fcn(vec![])).unwrap();
        assert_eq!(init_weights(&topo), init_weights(&topo));
        let mut other = fcn(vec![]);
        other.seed = 1;
        assert_ne!(init_weights(&topo), init_weights(&validate(&other).unwrap()));
    }
}
