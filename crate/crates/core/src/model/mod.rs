//! Edge-featured graph-attention link predictor.
//!
//! Nodes, base edges and candidate edges are each encoded to a scalar by a
//! two-layer MLP. Two attention layers with an MLP in between propagate
//! node embeddings over the base graph, and each candidate is scored from
//! the spliced triple `[h'_head, p_kg, h'_tail]` by a small MLP and a
//! sigmoid.

mod checkpoint;
pub mod features;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{NumericError, Tape, Tensor, Var};

pub use checkpoint::{Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use features::{AttentionEdges, ModelInput, EDGE_FEATURES, FEATURE_LAYOUT_ID, NODE_FEATURES};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("node {0} has no self-edge")]
    MissingSelfEdge(usize),
    #[error("schema version mismatch for {what}: expected {expected}, found {found}")]
    SchemaVersionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Layer widths. Encoder and second attention outputs are fixed at one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub enc_hidden: usize,
    pub gat1_out: usize,
    pub mid_hidden: usize,
    pub mid_out: usize,
    pub triple_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            enc_hidden: 64,
            gat1_out: 64,
            mid_hidden: 128,
            mid_out: 256,
            triple_hidden: 4,
        }
    }
}

impl ModelDims {
    /// Same width everywhere; used for cheap gradient checks.
    pub fn uniform(width: usize) -> Self {
        Self {
            enc_hidden: width,
            gat1_out: width,
            mid_hidden: width,
            mid_out: width,
            triple_hidden: width,
        }
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        push_mlp(&mut v, "enc_node", NODE_FEATURES, self.enc_hidden, 1);
        push_mlp(&mut v, "enc_edge", EDGE_FEATURES, self.enc_hidden, 1);
        push_mlp(&mut v, "enc_kg_edge", EDGE_FEATURES, self.enc_hidden, 1);
        push_gat(&mut v, "gat1", 1, self.gat1_out);
        push_mlp(&mut v, "mid", self.gat1_out, self.mid_hidden, self.mid_out);
        push_gat(&mut v, "gat2", self.mid_out, 1);
        push_mlp(&mut v, "triple", 3, self.triple_hidden, 1);
        v
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let mlp = |i: usize, h: usize, o: usize| h * i + h + o * h + o;
        let gat = |i: usize, o: usize| o * i + o + 3 * o;
        mlp(NODE_FEATURES, self.enc_hidden, 1)
            + 2 * mlp(EDGE_FEATURES, self.enc_hidden, 1)
            + gat(1, self.gat1_out)
            + mlp(self.gat1_out, self.mid_hidden, self.mid_out)
            + gat(self.mid_out, 1)
            + mlp(3, self.triple_hidden, 1)
    }
}

type Specs = Vec<(String, Vec<usize>)>;

fn push_mlp(v: &mut Specs, name: &str, i: usize, h: usize, o: usize) {
    v.push((format!("{name}.w1"), vec![h, i]));
    v.push((format!("{name}.b1"), vec![h]));
    v.push((format!("{name}.w2"), vec![o, h]));
    v.push((format!("{name}.b2"), vec![o]));
}

fn push_gat(v: &mut Specs, name: &str, i: usize, o: usize) {
    v.push((format!("{name}.theta"), vec![o, i]));
    v.push((format!("{name}.theta_p"), vec![o, 1]));
    v.push((format!("{name}.a"), vec![1, 3 * o]));
}

const ENC_NODE: usize = 0;
const ENC_EDGE: usize = 4;
const ENC_KG: usize = 8;
const GAT1: usize = 12;
const MID: usize = 15;
const GAT2: usize = 19;
const TRIPLE: usize = 22;
const N_TENSORS: usize = 26;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = dims.specs();
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let n: usize = shape.iter().product();
            let data = if shape.len() == 1 {
                vec![0.0; n]
            } else {
                let bound = 1.0 / (shape[1] as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            };
            tensors.push(Tensor::new(shape, data).expect("declared shape"));
            names.push(name);
        }
        let p = Self {
            dims,
            names,
            tensors,
        };
        assert_eq!(p.count(), dims.param_count(), "parameter count");
        p
    }

    pub(crate) fn from_parts(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let specs = dims.specs();
        if specs.len() != tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in specs.iter().zip(&tensors) {
            if &t.shape != shape || t.len() != shape.iter().product::<usize>() {
                return Err(ModelError::Checkpoint(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape
                )));
            }
        }
        Ok(Self {
            dims,
            names: specs.into_iter().map(|s| s.0).collect(),
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All parameters as one flat vector, in storage order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.count());
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data.copy_from_slice(&values[off..off + n]);
            off += n;
        }
    }
}

/// Attention-layer weights outside a tape, for standalone evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GatWeights {
    /// `[out, in]`
    pub theta: Tensor,
    /// `[out, 1]`
    pub theta_p: Tensor,
    /// `[1, 3 * out]`
    pub a: Tensor,
}

impl GatWeights {
    pub fn from_params(params: &ModelParams, layer: &str) -> Option<Self> {
        Some(Self {
            theta: params.get(&format!("{layer}.theta"))?.clone(),
            theta_p: params.get(&format!("{layer}.theta_p"))?.clone(),
            a: params.get(&format!("{layer}.a"))?.clone(),
        })
    }
}

/// Records one attention layer on `tape`.
///
/// `h` is `[n, in]`, `p` holds one encoded scalar per attention edge.
/// Logits are `LeakyReLU(a · [Θh_dst ‖ Θh_src ‖ Θ_p p])`, normalized over
/// each destination's incoming edges, and `h'_dst = Σ α Θh_src`.
pub fn gat_layer_tape(
    tape: &mut Tape,
    h: Var,
    p: Var,
    edges: &AttentionEdges,
    theta: Var,
    theta_p: Var,
    a: Var,
) -> Result<Var, ModelError> {
    if let Some(i) = edges.missing_self_loop() {
        return Err(ModelError::MissingSelfEdge(i));
    }
    let th = tape.linear(h, theta, None)?;
    let tp = tape.linear(p, theta_p, None)?;
    let th_dst = tape.gather_rows(th, &edges.dst)?;
    let th_src = tape.gather_rows(th, &edges.src)?;
    let cat = tape.concat_cols(&[th_dst, th_src, tp])?;
    let c = tape.linear(cat, a, None)?;
    let c = tape.leaky_relu(c, LEAKY_SLOPE);
    let alpha = tape.group_softmax(c, &edges.dst)?;
    Ok(tape.aggregate(alpha, th, &edges.src, &edges.dst, edges.n_nodes)?)
}

/// One attention layer evaluated without gradients.
///
/// `h` is `[n_nodes, in]` row-major; `edges` are `(src, dst, p)` triples
/// where `p` is the already-encoded edge scalar. Every node needs a
/// `(i, i, p)` self-edge.
pub fn gat_layer(
    h: &Tensor,
    edges: &[(usize, usize, f64)],
    w: &GatWeights,
) -> Result<Tensor, ModelError> {
    let (n, _) = h.rows_cols();
    let mut ae = AttentionEdges {
        n_nodes: n,
        src: Vec::new(),
        dst: Vec::new(),
        attr: Vec::new(),
    };
    for &(s, d, _) in edges {
        ae.push(s, d, [0.0; EDGE_FEATURES]);
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let pv = tape.constant(Tensor::matrix(
        edges.len(),
        1,
        edges.iter().map(|e| e.2).collect(),
    )?);
    let theta = tape.constant(w.theta.clone());
    let theta_p = tape.constant(w.theta_p.clone());
    let a = tape.constant(w.a.clone());
    let out = gat_layer_tape(&mut tape, hv, pv, &ae, theta, theta_p, a)?;
    Ok(tape.value(out).clone())
}

/// Parameter handles on a tape, in storage order.
#[derive(Debug, Clone)]
pub struct ParamVars(pub Vec<Var>);

impl ParamVars {
    pub fn record(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        assert_eq!(params.tensors.len(), N_TENSORS);
        Self(
            params
                .tensors
                .iter()
                .map(|t| {
                    if trainable {
                        tape.param(t.clone())
                    } else {
                        tape.constant(t.clone())
                    }
                })
                .collect(),
        )
    }
}

fn mlp(tape: &mut Tape, x: Var, v: &[Var]) -> Result<Var, ModelError> {
    let h = tape.linear(x, v[0], Some(v[1]))?;
    let h = tape.elu(h, ELU_ALPHA);
    Ok(tape.linear(h, v[2], Some(v[3]))?)
}

/// Tape handles of the intermediate results of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub h: Var,
    pub p: Var,
    pub p_kg: Var,
    pub h_out: Var,
    pub y_hat: Var,
}

/// Records the full forward pass on `tape`.
pub fn forward_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    input: &ModelInput,
) -> Result<ForwardVars, ModelError> {
    let v = &pv.0;
    let n = input.n_nodes();
    let e = input.edges.len();
    let q = input.n_candidates();

    let x = tape.constant(Tensor::matrix(n, NODE_FEATURES, input.node_x.clone())?);
    let ea = tape.constant(Tensor::matrix(e, EDGE_FEATURES, input.edge_attr_flat())?);
    let ca = tape.constant(Tensor::matrix(q, EDGE_FEATURES, input.cand_attr.clone())?);

    let h = mlp(tape, x, &v[ENC_NODE..ENC_NODE + 4])?;
    let p = mlp(tape, ea, &v[ENC_EDGE..ENC_EDGE + 4])?;
    let p_kg = mlp(tape, ca, &v[ENC_KG..ENC_KG + 4])?;

    let h1 = gat_layer_tape(tape, h, p, &input.edges, v[GAT1], v[GAT1 + 1], v[GAT1 + 2])?;
    let h1 = tape.elu(h1, ELU_ALPHA);
    let m = mlp(tape, h1, &v[MID..MID + 4])?;
    let h2 = gat_layer_tape(tape, m, p, &input.edges, v[GAT2], v[GAT2 + 1], v[GAT2 + 2])?;

    let hh = tape.gather_rows(h2, &input.cand_head)?;
    let ht = tape.gather_rows(h2, &input.cand_tail)?;
    let triple = tape.concat_cols(&[hh, p_kg, ht])?;
    let z = mlp(tape, triple, &v[TRIPLE..TRIPLE + 4])?;
    let y_hat = tape.sigmoid(z);
    Ok(ForwardVars {
        h,
        p,
        p_kg,
        h_out: h2,
        y_hat,
    })
}

/// Scalar encodings of nodes, attention edges and candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub h: Vec<f64>,
    pub p: Vec<f64>,
    pub p_kg: Vec<f64>,
}

pub fn encode(params: &ModelParams, input: &ModelInput) -> Result<Encoded, ModelError> {
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, params, false);
    let f = forward_tape(&mut tape, &pv, input)?;
    Ok(Encoded {
        h: tape.data(f.h).to_vec(),
        p: tape.data(f.p).to_vec(),
        p_kg: tape.data(f.p_kg).to_vec(),
    })
}

/// Candidate probabilities, in candidate order.
pub fn forward(params: &ModelParams, input: &ModelInput) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, params, false);
    let f = forward_tape(&mut tape, &pv, input)?;
    Ok(tape.data(f.y_hat).to_vec())
}
