//! Small dense-math building blocks with hand-written backward passes.
//!
//! Parameters are stored as `f64` but always hold values exactly
//! representable as `f32` (see [`round_f32`]), which is what checkpoints
//! persist. Forward and backward arithmetic runs in `f64`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Rounds to the nearest `f32`, keeping parameters checkpoint-exact.
#[inline]
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax in place, shifted by the maximum for stability.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| round_f32(dist.sample(rng))).collect()
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Self {
        Self {
            rows,
            cols,
            data: normal_vec(rng, rows * cols, std),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `out = self · x`
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    /// `out += selfᵀ · y`
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.matvec_t_acc(y, &mut out);
        out
    }

    /// `self += scale · a bᵀ`
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s != 0.0 {
                axpy(s, b, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// Fully connected network: ReLU on every hidden layer, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpTrace {
    /// `acts[0]` is the input; `acts[i]` the (post-ReLU) output of layer `i-1`.
    acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    /// Which hidden units were active (positive after ReLU).
    pub fn active_units(&self) -> Vec<bool> {
        self.acts[1..].iter().flatten().map(|&v| v > 0.0).collect()
    }
}

impl Mlp {
    /// `sizes` lists every width including input and output, e.g. `[44, 200, 80, 2]`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                Dense {
                    weight: Matrix::random(rng, w[1], w[0], std),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs()
    }

    pub fn forward(&self, input: Vec<f64>) -> MlpTrace {
        debug_assert_eq!(input.len(), self.input_dim());
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut x = input;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.bias.clone();
            for (r, yr) in y.iter_mut().enumerate() {
                *yr += dot(layer.weight.row(r), &x);
            }
            if i != last {
                for v in y.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            acts.push(x);
            x = y;
        }
        MlpTrace { acts, output: x }
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, trace: &MlpTrace, d_output: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let mut dy = d_output.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = &trace.acts[i];
            let g = &mut grads.layers[i];
            g.weight.add_outer(1.0, &dy, x);
            axpy(1.0, &dy, &mut g.bias);
            let mut dx = vec![0.0; layer.inputs()];
            layer.weight.matvec_t_acc(&dy, &mut dx);
            if i > 0 {
                // x is the ReLU output of the previous layer
                for (d, &xv) in dx.iter_mut().zip(x) {
                    if xv <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dy = dx;
        }
        dy
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.data(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
    }
}

/// Learnable id → vector map. Row 0 is the out-of-vocabulary row; id `i`
/// lives in row `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    /// A table with room for ids `0..vocab` plus the out-of-vocabulary row.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, vocab: usize, dim: usize, std: f64) -> Self {
        let rows = vocab + 1;
        Self {
            dim,
            rows,
            data: normal_vec(rng, rows * dim, std),
        }
    }

    pub fn zeros(vocab: usize, dim: usize) -> Self {
        Self {
            dim,
            rows: vocab + 1,
            data: vec![0.0; (vocab + 1) * dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows - 1, self.dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocab(&self) -> usize {
        self.rows - 1
    }

    /// Storage row for `id`, falling back to the out-of-vocabulary row.
    #[inline]
    pub fn row_index(&self, id: u32) -> usize {
        let r = id as usize + 1;
        if r < self.rows {
            r
        } else {
            0
        }
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn lookup(&self, id: u32) -> &[f64] {
        self.row(self.row_index(id))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matvec_and_transpose() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        let mut z = Matrix::zeros(2, 2);
        z.add_outer(2.0, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(z.data(), &[6.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn embedding_oov_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTable::new(&mut rng, 5, 4, 0.1);
        assert_eq!(t.row_index(0), 1);
        assert_eq!(t.row_index(4), 5);
        assert_eq!(t.row_index(5), 0);
        assert_eq!(t.lookup(99), t.row(0));
        assert!(t.data().iter().all(|&x| x == round_f32(x)));
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut v = vec![1000.0, 1001.0, 999.0];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v[1] > v[0] && v[0] > v[2]);
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::new(&mut rng, &[5, 7, 3, 2]);
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
        let w = [0.7, -1.3];
        let f = |m: &Mlp, x: &[f64]| dot(m.forward(x.to_vec()).output(), &w);
        let trace = mlp.forward(x.clone());
        let mut g = mlp.zeros_like();
        let dx = mlp.backward(&trace, &w, &mut g);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let num = (f(&mlp, &xp) - f(&mlp, &xm)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-6, "input {i}: {num} vs {}", dx[i]);
        }
        let mut probe = mlp.clone();
        let grads: Vec<Vec<f64>> = g.tensors().map(|t| t.to_vec()).collect();
        for (ti, gt) in grads.iter().enumerate() {
            for j in 0..gt.len() {
                let orig = probe.tensors().nth(ti).unwrap()[j];
                probe.tensors_mut().nth(ti).unwrap()[j] = orig + h;
                let fp = f(&probe, &x);
                probe.tensors_mut().nth(ti).unwrap()[j] = orig - h;
                let fm = f(&probe, &x);
                probe.tensors_mut().nth(ti).unwrap()[j] = orig;
                let num = (fp - fm) / (2.0 * h);
                assert!((num - gt[j]).abs() < 1e-6, "tensor {ti}[{j}]: {num} vs {}", gt[j]);
            }
        }
    }
}
