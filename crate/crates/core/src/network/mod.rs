//! Random bias-free ReLU networks with a scalar output.
//!
//! A network with hidden widths `d_1..d_ℓ` on inputs of dimension `d = d_0`
//! computes `f(x) = W_{ℓ+1} σ(W_ℓ σ(⋯ σ(W_1 x)))`. Layer `i` has shape
//! `d_i × d_{i−1}` and the output layer is `1 × d_ℓ`.
//!
//! The forward pass records everything the analysis needs: preactivations
//! `f̃_i(x) = W_i f_{i−1}(x)`, the diagonal activation masks `D_i`, and the
//! postactivations `f_i(x) = D_i f̃_i(x)`. Gradients and gradient differences
//! are evaluated from the recorded masks, never recomputed.

mod bottleneck;
mod io;

use serde::{Deserialize, Serialize};

pub use bottleneck::{bottleneck_decomposition, paper_radius, radius_formula, BottleneckDecomposition};
pub use io::{decode_network, encode_network, load_network, save_network};

use crate::error::{Error, Result};
use crate::linalg::{dot, gaussian_matrix, LinearOperator, Matrix, RngStream};

/// Input dimension plus hidden widths; the output dimension is always 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    input_dim: usize,
    hidden_widths: Vec<usize>,
}

impl Architecture {
    /// `hidden_widths` may be empty, giving the linear map `x ↦ W_1 x`.
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Shape("input dimension must be positive".into()));
        }
        if let Some(i) = hidden_widths.iter().position(|&w| w == 0) {
            return Err(Error::Shape(format!("hidden width {} is zero", i + 1)));
        }
        Ok(Architecture {
            input_dim,
            hidden_widths,
        })
    }

    /// `depth` hidden layers, all of width `width`.
    pub fn uniform(input_dim: usize, width: usize, depth: usize) -> Result<Self> {
        Self::new(input_dim, vec![width; depth])
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    /// Number of hidden layers `ℓ`.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// `d_0, d_1, …, d_ℓ`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden_widths.iter().copied())
            .collect()
    }

    /// `d_i` with `d_0 = d`.
    pub fn width(&self, i: usize) -> usize {
        if i == 0 {
            self.input_dim
        } else {
            self.hidden_widths[i - 1]
        }
    }

    pub fn d_min(&self) -> usize {
        self.widths().into_iter().min().unwrap_or(self.input_dim)
    }

    pub fn d_max(&self) -> usize {
        self.widths().into_iter().max().unwrap_or(self.input_dim)
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Entries of `W_i` are `N(0, 1/d_{i−1})`.
    Standard,
    /// Entries of `W_i` are `N(0, 2/d_{i−1})`, which preserves expected
    /// squared norms from one hidden layer to the next.
    DepthCollapse,
}

impl InitMode {
    pub fn weight_std(self, fan_in: usize) -> f64 {
        let var = match self {
            InitMode::Standard => 1.0,
            InitMode::DepthCollapse => 2.0,
        } / fan_in as f64;
        var.sqrt()
    }
}

/// Mask value for a preactivation that is exactly zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Active with probability 1/2, drawn from the caller's stream.
    RandomizedTies,
    TiesToOne,
    TiesToZero,
}

/// Seed and stream a network was sampled from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub stream_id: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    mode: InitMode,
    weights: Vec<Matrix>,
    provenance: Option<Provenance>,
}

/// Everything computed by one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// `f̃_1..f̃_ℓ`
    pub preactivations: Vec<Vec<f64>>,
    /// diagonals of `D_1..D_ℓ`
    pub masks: Vec<Vec<bool>>,
    /// `f_1..f_ℓ`
    pub postactivations: Vec<Vec<f64>>,
    pub output: f64,
}

impl ForwardTrace {
    /// `f_i` with `f_0 = x`.
    pub fn layer_output(&self, i: usize) -> &[f64] {
        if i == 0 {
            &self.input
        } else {
            &self.postactivations[i - 1]
        }
    }
}

/// The terms `Δ_1..Δ_ℓ` whose sum is `∇f(x) − ∇f(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradDecomposition {
    pub terms: Vec<Vec<f64>>,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

impl GradDecomposition {
    pub fn sum(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.grad_x.len()];
        for term in &self.terms {
            for (t, v) in total.iter_mut().zip(term) {
                *t += v;
            }
        }
        total
    }

    /// `‖Σ_j Δ_j − (∇f(x) − ∇f(y))‖`
    pub fn residual(&self) -> f64 {
        let diff = crate::linalg::sub(&self.grad_x, &self.grad_y);
        crate::linalg::distance(&self.sum(), &diff)
    }
}

/// Samples every weight matrix from `rng` in layer order.
pub fn build_network(arch: &Architecture, mode: InitMode, rng: &mut RngStream) -> Network {
    let widths = arch.widths();
    let mut weights = Vec::with_capacity(widths.len());
    for i in 1..=widths.len() {
        let fan_in = widths[i - 1];
        let rows = widths.get(i).copied().unwrap_or(1);
        weights.push(gaussian_matrix(rows, fan_in, mode.weight_std(fan_in), rng));
    }
    Network {
        arch: arch.clone(),
        mode,
        weights,
        provenance: Some(Provenance {
            master_seed: rng.master_seed(),
            stream_id: rng.stream_id(),
        }),
    }
}

impl Network {
    /// Builds a network from explicit weights `W_1..W_{ℓ+1}`, bypassing
    /// sampling. Shapes must chain and the last matrix must have one row.
    pub fn from_weights(mode: InitMode, weights: Vec<Matrix>) -> Result<Self> {
        let last = weights
            .last()
            .ok_or_else(|| Error::Shape("a network needs at least one layer".into()))?;
        if last.rows() != 1 {
            return Err(Error::Shape(format!(
                "output layer has {} rows, expected 1",
                last.rows()
            )));
        }
        for (i, pair) in weights.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::Shape(format!(
                    "layer {} has {} columns but layer {} has {} rows",
                    i + 2,
                    pair[1].cols(),
                    i + 1,
                    pair[0].rows()
                )));
            }
        }
        let hidden = weights[..weights.len() - 1].iter().map(Matrix::rows).collect();
        let arch = Architecture::new(weights[0].cols(), hidden)?;
        Ok(Network {
            arch,
            mode,
            weights,
            provenance: None,
        })
    }

    pub(crate) fn with_provenance(mut self, provenance: Option<Provenance>) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn mode(&self) -> InitMode {
        self.mode
    }

    /// `W_1..W_{ℓ+1}`
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    /// `W_i`, 1-based to match the layer numbering.
    pub fn layer(&self, i: usize) -> &Matrix {
        &self.weights[i - 1]
    }

    pub fn provenance(&self) -> Option<Provenance> {
        self.provenance
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    /// The partial network made of layers `start+1..=ℓ+1`, mapping
    /// `f_start(x)` to `f(x)`.
    pub fn suffix(&self, start: usize) -> Network {
        assert!(start <= self.depth(), "suffix start beyond the last hidden layer");
        Network::from_weights(self.mode, self.weights[start..].to_vec())
            .expect("suffix of a valid network is valid")
    }

    /// Full forward pass. `rng` is drawn from only when a preactivation is
    /// exactly zero under [`TiePolicy::RandomizedTies`].
    pub fn forward(&self, x: &[f64], policy: TiePolicy, rng: &mut RngStream) -> ForwardTrace {
        assert_eq!(x.len(), self.arch.input_dim(), "forward: input dimension");
        let depth = self.depth();
        let mut preactivations = Vec::with_capacity(depth);
        let mut masks = Vec::with_capacity(depth);
        let mut postactivations = Vec::with_capacity(depth);
        let mut current = x.to_vec();
        for w in &self.weights[..depth] {
            let pre = w.matvec(&current);
            let mask: Vec<bool> = pre
                .iter()
                .map(|&v| {
                    if v > 0.0 {
                        true
                    } else if v < 0.0 {
                        false
                    } else {
                        match policy {
                            TiePolicy::RandomizedTies => rng.bernoulli(0.5),
                            TiePolicy::TiesToOne => true,
                            TiePolicy::TiesToZero => false,
                        }
                    }
                })
                .collect();
            let post: Vec<f64> = pre
                .iter()
                .zip(&mask)
                .map(|(&v, &on)| if on { v } else { 0.0 })
                .collect();
            preactivations.push(pre);
            masks.push(mask);
            current = post.clone();
            postactivations.push(post);
        }
        let output = dot(self.weights[depth].row(0), &current);
        ForwardTrace {
            input: x.to_vec(),
            preactivations,
            masks,
            postactivations,
            output,
        }
    }

    /// `f(x)` without recording a trace. Tie handling cannot change the
    /// value, only the masks, so none is needed.
    pub fn output(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.arch.input_dim(), "output: input dimension");
        let depth = self.depth();
        let mut current = x.to_vec();
        for w in &self.weights[..depth] {
            current = w.matvec(&current);
            current.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        dot(self.weights[depth].row(0), &current)
    }

    /// `∇f(x) = W_{ℓ+1} D_ℓ W_ℓ ⋯ D_1 W_1` from the masks in `trace`,
    /// by backward vector-matrix products.
    pub fn gradient(&self, trace: &ForwardTrace) -> Vec<f64> {
        self.backward(self.weights[self.depth()].row(0).to_vec(), &trace.masks, self.depth())
    }

    /// Pushes a row vector living at layer `top` back through
    /// `D_top W_top ⋯ D_1 W_1` using the given masks.
    fn backward(&self, mut row: Vec<f64>, masks: &[Vec<bool>], top: usize) -> Vec<f64> {
        for i in (1..=top).rev() {
            apply_mask(&mut row, &masks[i - 1]);
            row = self.weights[i - 1].vecmat(&row);
        }
        row
    }

    /// Exact layerwise decomposition of `∇f(x) − ∇f(y)`:
    ///
    /// `Δ_j = W_{ℓ+1} (∏_{i=ℓ}^{j+1} D_i(x) W_i) (D_j(x) − D_j(y)) W_j (∏_{i=j−1}^{1} D_i(y) W_i)`
    pub fn grad_difference_decomposition(
        &self,
        trace_x: &ForwardTrace,
        trace_y: &ForwardTrace,
    ) -> GradDecomposition {
        let depth = self.depth();
        let d = self.arch.input_dim();
        // left[j] = W_{ℓ+1} ∏_{i=ℓ}^{j+1} D_i(x) W_i, a row vector of width d_j
        let mut left = vec![Vec::new(); depth + 1];
        let mut row = self.weights[depth].row(0).to_vec();
        for j in (1..=depth).rev() {
            left[j] = row.clone();
            apply_mask(&mut row, &trace_x.masks[j - 1]);
            row = self.weights[j - 1].vecmat(&row);
        }
        let grad_x = row;

        let terms = (1..=depth)
            .map(|j| {
                let mx = &trace_x.masks[j - 1];
                let my = &trace_y.masks[j - 1];
                if mx == my {
                    return vec![0.0; d];
                }
                let u: Vec<f64> = left[j]
                    .iter()
                    .zip(mx.iter().zip(my))
                    .map(|(&v, (&a, &b))| v * (f64::from(u8::from(a)) - f64::from(u8::from(b))))
                    .collect();
                let below = self.weights[j - 1].vecmat(&u);
                self.backward(below, &trace_y.masks, j - 1)
            })
            .collect();
        let grad_y = self.gradient(trace_y);
        GradDecomposition {
            terms,
            grad_x,
            grad_y,
        }
    }
}

/// The masked product `M_{upper,lower} = ∏_{k=upper}^{lower+1} D_k W_k`,
/// mapping layer-`lower` vectors to layer-`upper` vectors, evaluated lazily.
pub struct MaskedSegment<'a> {
    net: &'a Network,
    masks: &'a [Vec<bool>],
    lower: usize,
    upper: usize,
}

impl<'a> MaskedSegment<'a> {
    /// `masks` are the diagonals of `D_1..D_ℓ`, typically from a trace.
    pub fn new(net: &'a Network, masks: &'a [Vec<bool>], lower: usize, upper: usize) -> Self {
        assert!(lower < upper && upper <= net.depth(), "segment bounds out of range");
        assert_eq!(masks.len(), net.depth(), "one mask per hidden layer");
        MaskedSegment {
            net,
            masks,
            lower,
            upper,
        }
    }
}

impl LinearOperator for MaskedSegment<'_> {
    fn nrows(&self) -> usize {
        self.net.arch.width(self.upper)
    }

    fn ncols(&self) -> usize {
        self.net.arch.width(self.lower)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        for k in self.lower + 1..=self.upper {
            v = self.net.layer(k).matvec(&v);
            apply_mask(&mut v, &self.masks[k - 1]);
        }
        v
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut v = y.to_vec();
        for k in (self.lower + 1..=self.upper).rev() {
            apply_mask(&mut v, &self.masks[k - 1]);
            v = self.net.layer(k).vecmat(&v);
        }
        v
    }
}

fn apply_mask(row: &mut [f64], mask: &[bool]) {
    for (v, &on) in row.iter_mut().zip(mask) {
        if !on {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;

    fn relu_1d() -> Network {
        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        Network::from_weights(InitMode::Standard, vec![one.clone(), one]).unwrap()
    }

    #[test]
    fn architecture_rejects_zero_widths() {
        assert!(Architecture::new(0, vec![]).is_err());
        assert!(Architecture::new(3, vec![2, 0]).is_err());
        let a = Architecture::new(10, vec![5, 3, 7]).unwrap();
        assert_eq!(a.depth(), 3);
        assert_eq!(a.widths(), vec![10, 5, 3, 7]);
        assert_eq!((a.d_min(), a.d_max()), (3, 10));
    }

    #[test]
    fn build_shapes_and_scales() {
        let arch = Architecture::new(3, vec![2]).unwrap();
        let net = build_network(&arch, InitMode::Standard, &mut RngStream::new(1, 0));
        assert_eq!(net.layer(1).shape(), (2, 3));
        assert_eq!(net.layer(2).shape(), (1, 2));
        assert_eq!(InitMode::Standard.weight_std(3), (1.0f64 / 3.0).sqrt());
        assert_eq!(InitMode::Standard.weight_std(2), (0.5f64).sqrt());
        assert_eq!(InitMode::DepthCollapse.weight_std(5), (0.4f64).sqrt());
        assert_eq!(InitMode::DepthCollapse.weight_std(7), (2.0f64 / 7.0).sqrt());
        assert_eq!(
            net.provenance(),
            Some(Provenance {
                master_seed: 1,
                stream_id: 0
            })
        );
    }

    #[test]
    fn depth_collapse_entry_variance() {
        let arch = Architecture::new(5, vec![7]).unwrap();
        let mut sum1 = 0.0;
        let mut sum2 = 0.0;
        let reps = 4000;
        for s in 0..reps {
            let net = build_network(&arch, InitMode::DepthCollapse, &mut RngStream::new(11, s));
            sum1 += net.layer(1).frobenius_sq() / 35.0;
            sum2 += net.layer(2).frobenius_sq() / 7.0;
        }
        let (v1, v2) = (sum1 / reps as f64, sum2 / reps as f64);
        // sample variance of 140k (resp. 28k) squared normals: rel sd ≈ 0.4% (0.85%)
        assert!((v1 - 0.4).abs() < 0.4 * 0.02, "{v1}");
        assert!((v2 - 2.0 / 7.0).abs() < 2.0 / 7.0 * 0.04, "{v2}");
    }

    #[test]
    fn standard_frobenius_concentrates() {
        let arch = Architecture::new(100, vec![100]).unwrap();
        for s in 0..20 {
            let net = build_network(&arch, InitMode::Standard, &mut RngStream::new(5, s));
            let f = net.layer(1).frobenius_sq() / 100.0;
            assert!((0.8..=1.2).contains(&f), "seed {s}: {f}");
        }
    }

    #[test]
    fn one_dimensional_relu_by_hand() {
        let net = relu_1d();
        let mut rng = RngStream::new(0, 0);
        assert_eq!(net.forward(&[2.0], TiePolicy::RandomizedTies, &mut rng).output, 2.0);
        assert_eq!(net.forward(&[-2.0], TiePolicy::RandomizedTies, &mut rng).output, 0.0);
        assert_eq!(net.output(&[-2.0]), 0.0);
        let t = net.forward(&[-2.0], TiePolicy::TiesToOne, &mut rng);
        assert_eq!(t.masks, vec![vec![false]]);
        assert_eq!(t.postactivations, vec![vec![0.0]]);
    }

    #[test]
    fn exact_zero_ties_follow_the_policy() {
        let net = relu_1d();
        let mut rng = RngStream::new(0, 0);
        assert_eq!(net.forward(&[0.0], TiePolicy::TiesToOne, &mut rng).masks[0], vec![true]);
        assert_eq!(net.forward(&[0.0], TiePolicy::TiesToZero, &mut rng).masks[0], vec![false]);
        let n = 10_000;
        let ones = (0..n)
            .filter(|&s| {
                let mut r = RngStream::new(77, s);
                net.forward(&[0.0], TiePolicy::RandomizedTies, &mut r).masks[0][0]
            })
            .count();
        // binomial(10^4, 1/2): sd 50
        assert!((ones as i64 - 5000).abs() <= 250, "{ones}");
        // ties do not change values
        let t = net.forward(&[0.0], TiePolicy::TiesToOne, &mut rng);
        assert_eq!(t.output, 0.0);
        assert_eq!(net.gradient(&t), vec![1.0]);
    }

    #[test]
    fn randomized_ties_consume_rng_only_on_zero() {
        let net = relu_1d();
        let mut used = RngStream::new(4, 4);
        let mut fresh = RngStream::new(4, 4);
        net.forward(&[1.5], TiePolicy::RandomizedTies, &mut used);
        assert_eq!(used.uniform(), fresh.uniform());
    }

    #[test]
    fn linear_network_gradient_is_the_row() {
        let w = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let net = Network::from_weights(InitMode::Standard, vec![w]).unwrap();
        let mut rng = RngStream::new(0, 0);
        let t = net.forward(&[1.0, 1.0, 1.0], TiePolicy::RandomizedTies, &mut rng);
        assert_eq!(net.gradient(&t), vec![1.0, -2.0, 0.5]);
        assert_eq!(t.output, -0.5);
    }

    #[test]
    fn from_weights_validates_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(1, 3);
        assert!(Network::from_weights(InitMode::Standard, vec![a.clone(), b]).is_err());
        assert!(Network::from_weights(InitMode::Standard, vec![a]).is_err());
        assert!(Network::from_weights(InitMode::Standard, vec![]).is_err());
    }

    #[test]
    fn suffix_reproduces_the_tail_of_a_forward_pass() {
        let arch = Architecture::new(6, vec![5, 4, 3]).unwrap();
        let mut rng = RngStream::new(8, 0);
        let net = build_network(&arch, InitMode::Standard, &mut rng);
        let x = rng.sphere_point(6, 6f64.sqrt());
        let t = net.forward(&x, TiePolicy::TiesToZero, &mut rng);
        let tail = net.suffix(2);
        assert_eq!(tail.arch().widths(), vec![4, 3]);
        let tt = tail.forward(t.layer_output(2), TiePolicy::TiesToZero, &mut rng);
        assert_eq!(tt.output, t.output);
        assert_eq!(tt.postactivations[0], t.postactivations[2]);
    }

    #[test]
    fn masked_segment_edge_cases() {
        let w1 = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 1.0], vec![3.0, 0.0]]).unwrap();
        let w2 = Matrix::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap();
        let net = Network::from_weights(InitMode::Standard, vec![w1.clone(), w2]).unwrap();
        let on = vec![vec![true; 3]];
        let seg = MaskedSegment::new(&net, &on, 0, 1);
        let expect = crate::linalg::spectral_norm(&w1, 1e-14, 10_000).unwrap();
        let got = crate::linalg::operator_norm(&seg, 1e-14, 10_000).unwrap();
        assert!((got - expect).abs() < 1e-10);
        let off = vec![vec![false; 3]];
        let seg = MaskedSegment::new(&net, &off, 0, 1);
        assert_eq!(crate::linalg::operator_norm(&seg, 1e-12, 100).unwrap(), 0.0);
    }

    #[test]
    fn decomposition_of_identical_traces_vanishes() {
        let arch = Architecture::new(8, vec![16, 16]).unwrap();
        let mut rng = RngStream::new(2, 0);
        let net = build_network(&arch, InitMode::Standard, &mut rng);
        let x = rng.sphere_point(8, 8f64.sqrt());
        let t = net.forward(&x, TiePolicy::RandomizedTies, &mut rng);
        let dec = net.grad_difference_decomposition(&t, &t);
        assert!(dec.terms.iter().all(|term| term.iter().all(|&v| v == 0.0)));
        assert_eq!(dec.grad_x, dec.grad_y);
    }

    #[test]
    fn decomposition_terms_vanish_where_masks_agree() {
        let arch = Architecture::new(10, vec![30, 30, 30]).unwrap();
        let mut rng = RngStream::new(3, 0);
        let net = build_network(&arch, InitMode::Standard, &mut rng);
        let x = rng.sphere_point(10, 10f64.sqrt());
        let y = rng.ball_point(&x, 0.3);
        let tx = net.forward(&x, TiePolicy::RandomizedTies, &mut rng);
        let ty = net.forward(&y, TiePolicy::RandomizedTies, &mut rng);
        let dec = net.grad_difference_decomposition(&tx, &ty);
        let scale = norm(&dec.grad_x) + norm(&dec.grad_y);
        assert!(dec.residual() <= 1e-10 * scale);
        for (j, term) in dec.terms.iter().enumerate() {
            if tx.masks[j] == ty.masks[j] {
                assert!(term.iter().all(|&v| v == 0.0));
            }
        }
    }
}
