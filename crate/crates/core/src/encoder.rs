//! Multi-head graph-attention encoder.
//!
//! Each head projects node features (`Z = X·W`), scores every edge with
//! `LeakyReLU(a_leftᵀ z_i + a_rightᵀ z_j)`, normalizes the scores over each
//! node's neighborhood and aggregates the projected neighbors. The `K`
//! head outputs are averaged before a single shared PReLU:
//!
//! ```text
//! h_i = PReLU( 1/K Σ_k Σ_{j∈N(i)} α^k_ij · z^k_j )
//! ```
//!
//! Projection weights are stored input-major (`F×F'`), so `Z = X·W` and
//! zero features are skipped during the product.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::matrix::Matrix;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const INITIAL_PRELU_SLOPE: f64 = 0.25;

/// How a head weights its neighbors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Learned attention coefficients.
    Attention,
    /// Fixed `1/|N(i)|` weights; attention vectors are ignored.
    Mean,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Attention => "attention",
            Aggregation::Mean => "mean",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Aggregation::Attention),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// One attention mechanism: projection `weight` (`F×F'`) and attention
/// vector `attention` (`2F'×1`, source half first).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    pub weight: Matrix,
    pub attention: Matrix,
}

impl AttentionHead {
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub heads: Vec<AttentionHead>,
    /// Shared PReLU slope (`1×1`).
    pub prelu_slope: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<EncoderLayer>,
    pub leaky_slope: f64,
    pub aggregation: Aggregation,
}

impl EncoderParams {
    /// Checks that all heads agree on shapes and layers chain together.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        let mut expected_in = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let first = layer
                .heads
                .first()
                .ok_or_else(|| Error::Config(format!("layer {l} has no heads")))?;
            let (fin, fout) = first.weight.shape();
            if let Some(prev) = expected_in {
                if fin != prev {
                    return Err(Error::Shape {
                        op: "encoder layer chain",
                        left: (prev, prev),
                        right: first.weight.shape(),
                    });
                }
            }
            for head in &layer.heads {
                if head.weight.shape() != (fin, fout) || head.attention.shape() != (2 * fout, 1) {
                    return Err(Error::Shape {
                        op: "attention head",
                        left: head.weight.shape(),
                        right: head.attention.shape(),
                    });
                }
            }
            expected_in = Some(fout);
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].heads[0].input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().expect("validated").heads[0].output_dim()
    }

    pub fn num_heads(&self) -> usize {
        self.layers[0].heads.len()
    }

    /// Named parameter tensors, in the same order as [`EncoderVars::all`].
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (k, h) in layer.heads.iter().enumerate() {
                out.push((format!("layer{l}.head{k}.weight"), &h.weight));
                out.push((format!("layer{l}.head{k}.attention"), &h.attention));
            }
            out.push((format!("layer{l}.prelu_slope"), &layer.prelu_slope));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for h in &mut layer.heads {
                out.push(&mut h.weight);
                out.push(&mut h.attention);
            }
            out.push(&mut layer.prelu_slope);
        }
        out
    }

    /// Records every parameter on `tape`.
    pub fn bind<'g>(&self, tape: &mut Tape<'g>, requires_grad: bool) -> EncoderVars {
        let layers = self
            .layers
            .iter()
            .map(|layer| LayerVars {
                heads: layer
                    .heads
                    .iter()
                    .map(|h| HeadVars {
                        weight: tape.leaf(h.weight.clone(), requires_grad),
                        attention: tape.leaf(h.attention.clone(), requires_grad),
                    })
                    .collect(),
                prelu_slope: tape.leaf(layer.prelu_slope.clone(), requires_grad),
            })
            .collect();
        EncoderVars {
            layers,
            leaky_slope: self.leaky_slope,
            aggregation: self.aggregation,
        }
    }

    /// Forward pass without gradients.
    pub fn encode(&self, features: &FeatureMatrix, graph: &Graph) -> Result<Matrix> {
        self.validate()?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant_ref(features.as_matrix());
        let h = vars.encode(&mut tape, x, graph)?;
        Ok(tape.value(h).clone())
    }

    /// Attention coefficients of every head, indexed `[layer][head][edge]`
    /// with edges in CSR order.
    pub fn attention_coefficients(
        &self,
        features: &FeatureMatrix,
        graph: &Graph,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        self.validate()?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let mut input = tape.constant_ref(features.as_matrix());
        let mut out = Vec::with_capacity(vars.layers.len());
        for layer in &vars.layers {
            let mut per_head = Vec::with_capacity(layer.heads.len());
            for head in &layer.heads {
                let z = tape.matmul(input, head.weight)?;
                let alpha = vars.edge_weights(&mut tape, head, z, graph)?;
                per_head.push(tape.value(alpha).as_slice().to_vec());
            }
            out.push(per_head);
            input = vars.layer_forward(&mut tape, layer, input, graph)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub weight: Var,
    pub attention: Var,
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub heads: Vec<HeadVars>,
    pub prelu_slope: Var,
}

/// Encoder parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub layers: Vec<LayerVars>,
    pub leaky_slope: f64,
    pub aggregation: Aggregation,
}

impl EncoderVars {
    /// Every parameter handle, in checkpoint order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for h in &layer.heads {
                out.push(h.weight);
                out.push(h.attention);
            }
            out.push(layer.prelu_slope);
        }
        out
    }

    /// Unnormalized edge logits `LeakyReLU(a_leftᵀ z_i + a_rightᵀ z_j)`.
    pub fn attention_logits<'g>(
        &self,
        tape: &mut Tape<'g>,
        head: &HeadVars,
        z: Var,
        graph: &'g Graph,
    ) -> Result<Var> {
        let scores = tape.edge_pair_scores(z, head.attention, graph)?;
        Ok(tape.leaky_relu(scores, self.leaky_slope))
    }

    fn edge_weights<'g>(
        &self,
        tape: &mut Tape<'g>,
        head: &HeadVars,
        z: Var,
        graph: &'g Graph,
    ) -> Result<Var> {
        match self.aggregation {
            Aggregation::Attention => {
                let logits = self.attention_logits(tape, head, z, graph)?;
                tape.segment_softmax(logits, graph)
            }
            Aggregation::Mean => Ok(tape.constant(uniform_weights(graph)?)),
        }
    }

    /// One head's neighborhood aggregate `Σ_j α_ij z_j`, before activation.
    pub fn head_aggregate<'g>(
        &self,
        tape: &mut Tape<'g>,
        head: &HeadVars,
        input: Var,
        graph: &'g Graph,
    ) -> Result<Var> {
        let z = tape.matmul(input, head.weight)?;
        self.aggregate_projected(tape, head, z, graph)
    }

    fn aggregate_projected<'g>(
        &self,
        tape: &mut Tape<'g>,
        head: &HeadVars,
        z: Var,
        graph: &'g Graph,
    ) -> Result<Var> {
        let alpha = self.edge_weights(tape, head, z, graph)?;
        tape.segment_weighted_sum(alpha, z, graph)
    }

    fn combine_heads(&self, tape: &mut Tape<'_>, layer: &LayerVars, outs: Vec<Var>) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for out in outs {
            acc = Some(match acc {
                None => out,
                Some(prev) => tape.add(prev, out)?,
            });
        }
        let summed = acc.ok_or_else(|| Error::Config("layer has no heads".into()))?;
        let mean = tape.scale(summed, 1.0 / layer.heads.len() as f64);
        tape.prelu(mean, layer.prelu_slope)
    }

    fn layer_forward<'g>(
        &self,
        tape: &mut Tape<'g>,
        layer: &LayerVars,
        input: Var,
        graph: &'g Graph,
    ) -> Result<Var> {
        let outs = layer
            .heads
            .iter()
            .map(|head| self.head_aggregate(tape, head, input, graph))
            .collect::<Result<Vec<_>>>()?;
        self.combine_heads(tape, layer, outs)
    }

    /// Node embeddings `H` (`N×F'`).
    pub fn encode<'g>(&self, tape: &mut Tape<'g>, x: Var, graph: &'g Graph) -> Result<Var> {
        let (rows, _) = tape.value(x).shape();
        if rows != graph.num_nodes() {
            return Err(Error::Shape {
                op: "encode",
                left: tape.value(x).shape(),
                right: (graph.num_nodes(), graph.num_nodes()),
            });
        }
        let mut h = x;
        for layer in &self.layers {
            h = self.layer_forward(tape, layer, h, graph)?;
        }
        Ok(h)
    }

    /// Embeddings of `x` and of its row shuffle `x[order]` over the same
    /// graph. The first-layer projections of the shuffled stream are the
    /// clean ones with rows reordered, so they are gathered rather than
    /// recomputed.
    pub fn encode_pair<'g>(
        &self,
        tape: &mut Tape<'g>,
        x: Var,
        order: &[usize],
        graph: &'g Graph,
    ) -> Result<(Var, Var)> {
        let shape = tape.value(x).shape();
        if shape.0 != graph.num_nodes() || order.len() != shape.0 {
            return Err(Error::Shape {
                op: "encode_pair",
                left: shape,
                right: (graph.num_nodes(), order.len()),
            });
        }
        let Some((first, rest)) = self.layers.split_first() else {
            return Ok((x, tape.gather_rows(x, order)?));
        };
        let mut clean = Vec::with_capacity(first.heads.len());
        let mut shuffled = Vec::with_capacity(first.heads.len());
        for head in &first.heads {
            let z = tape.matmul(x, head.weight)?;
            let z_neg = tape.gather_rows(z, order)?;
            clean.push(self.aggregate_projected(tape, head, z, graph)?);
            shuffled.push(self.aggregate_projected(tape, head, z_neg, graph)?);
        }
        let mut h = self.combine_heads(tape, first, clean)?;
        let mut h_neg = self.combine_heads(tape, first, shuffled)?;
        for layer in rest {
            h = self.layer_forward(tape, layer, h, graph)?;
            h_neg = self.layer_forward(tape, layer, h_neg, graph)?;
        }
        Ok((h, h_neg))
    }
}

/// `1/|N(i)|` for every CSR entry of row `i`.
fn uniform_weights(graph: &Graph) -> Result<Matrix> {
    let mut w = Vec::with_capacity(graph.num_entries());
    for i in 0..graph.num_nodes() {
        let d = graph.degree(i);
        if d == 0 {
            return Err(Error::Invariant(format!("node {i} has no neighbors")));
        }
        w.extend(std::iter::repeat(1.0 / d as f64).take(d));
    }
    Matrix::from_vec(w.len(), 1, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, f: usize, fo: usize, k: usize) -> EncoderParams {
        EncoderParams {
            layers: vec![EncoderLayer {
                heads: (0..k)
                    .map(|_| AttentionHead {
                        weight: rand_matrix(rng, f, fo),
                        attention: rand_matrix(rng, 2 * fo, 1),
                    })
                    .collect(),
                prelu_slope: Matrix::scalar(INITIAL_PRELU_SLOPE),
            }],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            aggregation: Aggregation::Attention,
        }
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i < j)
            .filter(|_| rng.gen_bool(0.35))
            .collect();
        Graph::build(&edges, n, true, true).unwrap()
    }

    fn logits_of(params: &EncoderParams, x: &Matrix, g: &Graph) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let head = vars.layers[0].heads[0];
        let z = tape.matmul(xv, head.weight).unwrap();
        let l = vars.attention_logits(&mut tape, &head, z, g).unwrap();
        tape.value(l).as_slice().to_vec()
    }

    #[test]
    fn logit_of_opposite_projections_is_zero() {
        let params = EncoderParams {
            layers: vec![EncoderLayer {
                heads: vec![AttentionHead {
                    weight: Matrix::scalar(2.0),
                    attention: Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap(),
                }],
                prelu_slope: Matrix::scalar(INITIAL_PRELU_SLOPE),
            }],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            aggregation: Aggregation::Attention,
        };
        let g = Graph::build(&[(0, 1)], 2, false, false).unwrap();
        let x = Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        // only entry is (0, 1): aᵀ[2 ‖ -2] = 0
        assert_eq!(logits_of(&params, &x, &g), vec![0.0]);
    }

    #[test]
    fn zero_attention_vector_gives_uniform_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = random_params(&mut rng, 4, 3, 1);
        params.layers[0].heads[0].attention = Matrix::zeros(6, 1);
        let g = random_graph(&mut rng, 6);
        let x = FeatureMatrix::new(rand_matrix(&mut rng, 6, 4)).unwrap();
        assert!(logits_of(&params, x.as_matrix(), &g).iter().all(|&v| v == 0.0));
        let alpha = &params.attention_coefficients(&x, &g).unwrap()[0][0];
        for i in 0..6 {
            for e in g.row_range(i) {
                assert!((alpha[e] - 1.0 / g.degree(i) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn decomposed_logits_match_explicit_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let params = random_params(&mut rng, 4, 3, 1);
            let g = random_graph(&mut rng, 5);
            let x = rand_matrix(&mut rng, 5, 4);
            let got = logits_of(&params, &x, &g);
            let head = &params.layers[0].heads[0];
            for (e, (i, j)) in g.edges().into_iter().enumerate() {
                let zi: Vec<f64> = (0..3).map(|o| dot(x.row(i), &column(&head.weight, o))).collect();
                let zj: Vec<f64> = (0..3).map(|o| dot(x.row(j), &column(&head.weight, o))).collect();
                let cat: Vec<f64> = zi.iter().chain(&zj).copied().collect();
                let raw = dot(head.attention.as_slice(), &cat);
                let want = if raw >= 0.0 { raw } else { 0.2 * raw };
                assert!((got[e] - want).abs() < 1e-12);
            }
        }
    }

    fn column(m: &Matrix, c: usize) -> Vec<f64> {
        (0..m.rows()).map(|r| m.get(r, c)).collect()
    }

    fn head_output(params: &EncoderParams, x: &Matrix, g: &Graph) -> Matrix {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = vars
            .head_aggregate(&mut tape, &vars.layers[0].heads[0], xv, g)
            .unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn self_loop_only_graph_returns_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = random_params(&mut rng, 3, 2, 1);
        let g = Graph::build(&[], 4, false, true).unwrap();
        let x = rand_matrix(&mut rng, 4, 3);
        let want = crate::autodiff::mm(&x, &params.layers[0].heads[0].weight);
        assert_eq!(head_output(&params, &x, &g), want);
    }

    #[test]
    fn identical_feature_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let params = random_params(&mut rng, 3, 2, 2);
        let g = random_graph(&mut rng, 6);
        let row = [0.3, -0.2, 0.9];
        let x = FeatureMatrix::from_rows(&vec![row; 6]).unwrap();
        let h = params.encode(&x, &g).unwrap();
        // equal up to rounding: neighborhoods of different size sum differently
        for i in 1..6 {
            for (a, b) in h.row(i).iter().zip(h.row(0)) {
                assert!((a - b).abs() < 1e-14, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn head_output_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..10 {
            let params = random_params(&mut rng, 3, 2, 1);
            let g = random_graph(&mut rng, 4);
            let x = rand_matrix(&mut rng, 4, 3);
            let head = &params.layers[0].heads[0];
            // dense brute force: full N×N attention matrix masked by adjacency
            let n = 4;
            let z: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..2).map(|o| dot(x.row(i), &column(&head.weight, o))).collect())
                .collect();
            let a = head.attention.as_slice();
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                let mut denom = 0.0;
                for j in 0..n {
                    if g.has_edge(i, j) {
                        let raw = a[0] * z[i][0] + a[1] * z[i][1] + a[2] * z[j][0] + a[3] * z[j][1];
                        let e = if raw >= 0.0 { raw } else { 0.2 * raw };
                        dense[i][j] = e.exp();
                        denom += dense[i][j];
                    }
                }
                for v in dense[i].iter_mut() {
                    *v /= denom;
                }
            }
            let got = head_output(&params, &x, &g);
            for i in 0..n {
                for o in 0..2 {
                    let want: f64 = (0..n).map(|j| dense[i][j] * z[j][o]).sum();
                    assert!((got.get(i, o) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_head_is_prelu_of_head_aggregate() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let params = random_params(&mut rng, 3, 4, 1);
        let g = random_graph(&mut rng, 6);
        let x = FeatureMatrix::new(rand_matrix(&mut rng, 6, 3)).unwrap();
        let agg = head_output(&params, x.as_matrix(), &g);
        let h = params.encode(&x, &g).unwrap();
        for (got, raw) in h.as_slice().iter().zip(agg.as_slice()) {
            let want = if *raw >= 0.0 { *raw } else { INITIAL_PRELU_SLOPE * raw };
            assert_eq!(*got, want);
        }
    }

    #[test]
    fn duplicated_heads_match_single_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let one = random_params(&mut rng, 3, 4, 1);
        let mut two = one.clone();
        let head = two.layers[0].heads[0].clone();
        two.layers[0].heads.push(head);
        let g = random_graph(&mut rng, 6);
        let x = FeatureMatrix::new(rand_matrix(&mut rng, 6, 3)).unwrap();
        assert_eq!(one.encode(&x, &g).unwrap(), two.encode(&x, &g).unwrap());
    }

    #[test]
    fn attention_sums_to_one_per_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let params = random_params(&mut rng, 5, 4, 3);
        let g = random_graph(&mut rng, 9);
        let x = FeatureMatrix::new(rand_matrix(&mut rng, 9, 5)).unwrap();
        for head in &params.attention_coefficients(&x, &g).unwrap()[0] {
            for i in 0..9 {
                let r = g.row_range(i);
                assert!(head[r.clone()].iter().all(|&a| a > 0.0));
                let s: f64 = head[r].iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn output_is_local_to_one_hop() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..5 {
            let params = random_params(&mut rng, 3, 4, 2);
            let g = random_graph(&mut rng, 7);
            let x = rand_matrix(&mut rng, 7, 3);
            let base = params.encode(&FeatureMatrix::new(x.clone()).unwrap(), &g).unwrap();
            for u in 0..7 {
                let mut changed = x.clone();
                for v in changed.row_mut(u) {
                    *v += 0.5;
                }
                let h = params.encode(&FeatureMatrix::new(changed).unwrap(), &g).unwrap();
                for v in 0..7 {
                    if v != u && !g.has_edge(v, u) {
                        assert_eq!(h.row(v), base.row(v), "node {v} moved when {u} changed");
                    } else if v == u {
                        assert_ne!(h.row(v), base.row(v));
                    }
                }
            }
        }
    }

    #[test]
    fn mean_aggregation_ignores_attention_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut params = random_params(&mut rng, 3, 2, 1);
        params.aggregation = Aggregation::Mean;
        let g = Graph::build(&[(0, 1), (1, 2)], 3, true, true).unwrap();
        let x = rand_matrix(&mut rng, 3, 3);
        let a = head_output(&params, &x, &g);
        params.layers[0].heads[0].attention = rand_matrix(&mut rng, 4, 1);
        assert_eq!(a, head_output(&params, &x, &g));
        let z = crate::autodiff::mm(&x, &params.layers[0].heads[0].weight);
        for o in 0..2 {
            let want = (z.get(0, o) + z.get(1, o) + z.get(2, o)) / 3.0;
            assert!((a.get(1, o) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn paired_encoding_matches_separate_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_graph(&mut rng, 7);
        let x = rand_matrix(&mut rng, 7, 4);
        let mut params = random_params(&mut rng, 4, 3, 2);
        params.layers.push(EncoderLayer {
            heads: vec![AttentionHead {
                weight: rand_matrix(&mut rng, 3, 3),
                attention: rand_matrix(&mut rng, 6, 1),
            }],
            prelu_slope: Matrix::scalar(0.1),
        });
        let order = [3, 0, 6, 1, 5, 2, 4];
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (h, h_neg) = vars.encode_pair(&mut tape, xv, &order, &g).unwrap();
        let fx = |m: Matrix| FeatureMatrix::new(m).unwrap();
        assert_eq!(tape.value(h), &params.encode(&fx(x.clone()), &g).unwrap());
        assert_eq!(tape.value(h_neg), &params.encode(&fx(x.gather_rows(&order)), &g).unwrap());
    }

    #[test]
    fn mismatched_feature_rows_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = random_params(&mut rng, 3, 2, 1);
        let g = random_graph(&mut rng, 4);
        let x = FeatureMatrix::new(rand_matrix(&mut rng, 5, 3)).unwrap();
        assert!(matches!(params.encode(&x, &g), Err(Error::Shape { .. })));
        let x = FeatureMatrix::new(rand_matrix(&mut rng, 4, 2)).unwrap();
        assert!(matches!(params.encode(&x, &g), Err(Error::Shape { .. })));
    }
}
