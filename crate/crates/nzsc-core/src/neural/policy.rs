//! Recurrent actor-critic: affine encoder with tanh, a GRU cell, one
//! affine logits head per action head, and an affine value head. Parameters
//! live in one flat vector so the optimizer, checkpoints and gradient
//! checks all see the same layout.

use super::tape::{Scalar, Tape, Var};
use crate::env::BatchPolicy;
use crate::rng::RngStream;
use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub obs_dim: usize,
    pub fc_dim: usize,
    pub hidden_dim: usize,
    pub heads: Vec<usize>,
}

/// (offset, rows, cols) span of one matrix inside the flat vector.
pub type Span = (usize, usize, usize);

#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub enc_w: Span,
    pub enc_b: Span,
    pub w_ih: Span,
    pub w_hh: Span,
    pub b_ih: Span,
    pub b_hh: Span,
    pub head_w: Vec<Span>,
    pub head_b: Vec<Span>,
    pub value_w: Span,
    pub value_b: Span,
    pub total: usize,
}

impl PolicyShape {
    pub fn layout(&self) -> ParamLayout {
        let mut cursor = 0usize;
        let mut take = |rows: usize, cols: usize| -> Span {
            let span = (cursor, rows, cols);
            cursor += rows * cols;
            span
        };
        let (o, f, h) = (self.obs_dim, self.fc_dim, self.hidden_dim);
        let enc_w = take(o, f);
        let enc_b = take(1, f);
        let w_ih = take(f, 3 * h);
        let w_hh = take(h, 3 * h);
        let b_ih = take(1, 3 * h);
        let b_hh = take(1, 3 * h);
        let mut head_w = Vec::new();
        let mut head_b = Vec::new();
        for &k in &self.heads {
            head_w.push(take(h, k));
            head_b.push(take(1, k));
        }
        let value_w = take(h, 1);
        let value_b = take(1, 1);
        ParamLayout { enc_w, enc_b, w_ih, w_hh, b_ih, b_hh, head_w, head_b, value_w, value_b, total: cursor }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Debug)]
pub struct PolicyNetwork<T: Scalar> {
    pub shape: PolicyShape,
    pub params: Vec<T>,
}

/// Tape handles for every parameter matrix, reused across the timesteps of
/// a backpropagation-through-time pass.
pub struct PolicyVars {
    enc_w: Var,
    enc_b: Var,
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
    head_w: Vec<Var>,
    head_b: Vec<Var>,
    value_w: Var,
    value_b: Var,
}

impl<T: Scalar> PolicyNetwork<T> {
    pub fn zeros(shape: PolicyShape) -> Self {
        let params = vec![T::zero(); shape.param_count()];
        Self { shape, params }
    }

    /// Orthogonal weights (per GRU gate block), zero biases, small actor
    /// head so the initial policy is near uniform.
    pub fn init(shape: PolicyShape, rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(shape);
        let layout = net.shape.layout();
        let (f, h) = (net.shape.fc_dim, net.shape.hidden_dim);
        net.fill_orthogonal(layout.enc_w, 1.0, rng);
        for gate in 0..3 {
            net.fill_orthogonal_block(layout.w_ih, f, gate * h, h, 1.0, rng);
            net.fill_orthogonal_block(layout.w_hh, h, gate * h, h, 1.0, rng);
        }
        for (i, &span) in layout.head_w.iter().enumerate() {
            let _ = i;
            net.fill_orthogonal(span, 0.01, rng);
        }
        net.fill_orthogonal(layout.value_w, 1.0, rng);
        net
    }

    fn fill_orthogonal(&mut self, span: Span, gain: f64, rng: &mut RngStream) {
        let (off, rows, cols) = span;
        let q = orthogonal_matrix(rows, cols, rng);
        for r in 0..rows {
            for c in 0..cols {
                self.params[off + r * cols + c] = T::from_f64(gain * q[(r, c)]);
            }
        }
    }

    /// Orthogonalize one column block of a wider matrix (a single GRU gate).
    fn fill_orthogonal_block(
        &mut self,
        span: Span,
        rows: usize,
        col_start: usize,
        block_cols: usize,
        gain: f64,
        rng: &mut RngStream,
    ) {
        let (off, _, total_cols) = span;
        let q = orthogonal_matrix(rows, block_cols, rng);
        for r in 0..rows {
            for c in 0..block_cols {
                self.params[off + r * total_cols + col_start + c] = T::from_f64(gain * q[(r, c)]);
            }
        }
    }

    fn view(&self, span: Span) -> ArrayView2<'_, T> {
        let (off, rows, cols) = span;
        ArrayView2::from_shape((rows, cols), &self.params[off..off + rows * cols])
            .expect("contiguous span")
    }

    /// One recurrent step over a batch; `hidden` is advanced in place.
    pub fn step_inference(
        &self,
        obs: ArrayView2<T>,
        hidden: &mut Array2<T>,
    ) -> (Vec<Array2<T>>, Array1<T>) {
        let layout = self.shape.layout();
        let h = self.shape.hidden_dim;
        let one = T::one();

        let mut x = obs.dot(&self.view(layout.enc_w));
        add_row_inplace(&mut x, self.view(layout.enc_b));
        x.mapv_inplace(|v| v.tanh());

        let mut gi = x.dot(&self.view(layout.w_ih));
        add_row_inplace(&mut gi, self.view(layout.b_ih));
        let mut gh = hidden.dot(&self.view(layout.w_hh));
        add_row_inplace(&mut gh, self.view(layout.b_hh));

        let sig = |v: T| one / (one + (-v).exp());
        let r = ndarray::Zip::from(gi.slice(s![.., 0..h]))
            .and(gh.slice(s![.., 0..h]))
            .map_collect(|&a, &b| sig(a + b));
        let z = ndarray::Zip::from(gi.slice(s![.., h..2 * h]))
            .and(gh.slice(s![.., h..2 * h]))
            .map_collect(|&a, &b| sig(a + b));
        let n = ndarray::Zip::from(gi.slice(s![.., 2 * h..3 * h]))
            .and(&r)
            .and(gh.slice(s![.., 2 * h..3 * h]))
            .map_collect(|&a, &rv, &b| (a + rv * b).tanh());
        let next = ndarray::Zip::from(&z)
            .and(&n)
            .and(&*hidden)
            .map_collect(|&zv, &nv, &hv| (one - zv) * nv + zv * hv);
        *hidden = next;

        let logits = layout
            .head_w
            .iter()
            .zip(&layout.head_b)
            .map(|(&w, &b)| {
                let mut l = hidden.dot(&self.view(w));
                add_row_inplace(&mut l, self.view(b));
                l
            })
            .collect();
        let mut value = hidden.dot(&self.view(layout.value_w));
        add_row_inplace(&mut value, self.view(layout.value_b));
        (logits, value.index_axis(ndarray::Axis(1), 0).to_owned())
    }

    /// Register every parameter matrix on a tape.
    pub fn tape_params(&self, tape: &mut Tape<T>) -> PolicyVars {
        let layout = self.shape.layout();
        let enc_w = tape.param_span(&self.params, layout.enc_w);
        let enc_b = tape.param_span(&self.params, layout.enc_b);
        let w_ih = tape.param_span(&self.params, layout.w_ih);
        let w_hh = tape.param_span(&self.params, layout.w_hh);
        let b_ih = tape.param_span(&self.params, layout.b_ih);
        let b_hh = tape.param_span(&self.params, layout.b_hh);
        let mut head_w = Vec::with_capacity(layout.head_w.len());
        let mut head_b = Vec::with_capacity(layout.head_b.len());
        for &s in &layout.head_w {
            head_w.push(tape.param_span(&self.params, s));
        }
        for &s in &layout.head_b {
            head_b.push(tape.param_span(&self.params, s));
        }
        let value_w = tape.param_span(&self.params, layout.value_w);
        let value_b = tape.param_span(&self.params, layout.value_b);
        PolicyVars { enc_w, enc_b, w_ih, w_hh, b_ih, b_hh, head_w, head_b, value_w, value_b }
    }

    /// The traced twin of [`Self::step_inference`], with gradients.
    pub fn tape_step(
        &self,
        tape: &mut Tape<T>,
        vars: &PolicyVars,
        obs: Var,
        hidden: Var,
    ) -> (Vec<Var>, Var, Var) {
        let x = tape.linear_tanh(obs, vars.enc_w, vars.enc_b);
        let next = tape.gru_step(x, hidden, vars.w_ih, vars.w_hh, vars.b_ih, vars.b_hh);
        let logits = vars
            .head_w
            .iter()
            .zip(&vars.head_b)
            .map(|(&w, &b)| tape.linear(next, w, b))
            .collect();
        let value = tape.linear(next, vars.value_w, vars.value_b);
        (logits, value, next)
    }

    pub fn zero_hidden(&self, batch: usize) -> Array2<T> {
        Array2::zeros((batch, self.shape.hidden_dim))
    }

    pub fn params_f32(&self) -> Vec<f32> {
        self.params.iter().map(|&p| p.to_f64() as f32).collect()
    }

    pub fn from_f32(shape: PolicyShape, raw: &[f32]) -> Self {
        assert_eq!(raw.len(), shape.param_count(), "parameter blob length");
        Self { shape, params: raw.iter().map(|&p| T::from_f64(p as f64)).collect() }
    }
}

fn add_row_inplace<T: Scalar>(m: &mut Array2<T>, row: ArrayView2<T>) {
    debug_assert_eq!(row.nrows(), 1);
    let bias = row.row(0);
    for mut r in m.rows_mut() {
        r.zip_mut_with(&bias, |x, &b| *x = *x + b);
    }
}

/// Orthogonal (rows x cols) matrix via modified Gram-Schmidt on gaussian
/// columns; when rows < cols the transpose construction keeps rows
/// orthonormal.
fn orthogonal_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Array2<f64> {
    let transpose = rows < cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut a = Array2::from_shape_simple_fn((r, c), || rng.normal());
    for j in 0..c {
        for k in 0..j {
            let dot = a.column(j).dot(&a.column(k));
            let col_k = a.column(k).to_owned();
            a.column_mut(j).zip_mut_with(&col_k, |x, &y| *x -= dot * y);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt().max(1e-12);
        a.column_mut(j).mapv_inplace(|x| x / norm);
    }
    if transpose {
        a.t().to_owned()
    } else {
        a
    }
}

impl BatchPolicy for PolicyNetwork<f32> {
    fn obs_dim(&self) -> usize {
        self.shape.obs_dim
    }
    fn head_sizes(&self) -> &[usize] {
        &self.shape.heads
    }
    fn hidden_dim(&self) -> usize {
        self.shape.hidden_dim
    }
    fn step_batch(
        &self,
        obs: ArrayView2<f32>,
        hidden: &mut Array2<f32>,
    ) -> (Vec<Array2<f32>>, Array1<f32>) {
        self.step_inference(obs, hidden)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_shape() -> PolicyShape {
        PolicyShape { obs_dim: 5, fc_dim: 8, hidden_dim: 8, heads: vec![3] }
    }

    #[test]
    fn param_count_is_a_function_of_dimensions() {
        let shape = small_shape();
        // enc 5*8+8, gru 8*24+8*24+24+24, head 8*3+3, value 8+1
        let expected = 5 * 8 + 8 + 8 * 24 + 8 * 24 + 24 + 24 + 8 * 3 + 3 + 8 + 1;
        assert_eq!(shape.param_count(), expected);
    }

    #[test]
    fn zero_network_gives_uniform_logits_and_zero_value() {
        let net = PolicyNetwork::<f64>::zeros(small_shape());
        let obs = Array2::from_shape_fn((4, 5), |(i, j)| (i + j) as f64 * 0.1);
        let mut hidden = net.zero_hidden(4);
        let (logits, value) = net.step_inference(obs.view(), &mut hidden);
        assert!(logits[0].iter().all(|&l| l == 0.0));
        assert!(value.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_observations_give_identical_outputs() {
        let mut rng = RngStream::new(3);
        let net = PolicyNetwork::<f64>::init(small_shape(), &mut rng);
        let mut obs = Array2::zeros((2, 5));
        obs.row_mut(0).assign(&ndarray::arr1(&[0.1, -0.4, 0.9, 0.0, 1.0]));
        let row = obs.row(0).to_owned();
        obs.row_mut(1).assign(&row);
        let mut hidden = net.zero_hidden(2);
        let (logits, value) = net.step_inference(obs.view(), &mut hidden);
        assert_eq!(logits[0].row(0), logits[0].row(1));
        assert_eq!(value[0], value[1]);
        assert_eq!(hidden.row(0), hidden.row(1));
    }

    #[test]
    fn multi_head_shapes_are_respected() {
        // Movement plus token guess, as in the mirrored-grid game.
        let shape = PolicyShape { obs_dim: 7, fc_dim: 8, hidden_dim: 8, heads: vec![5, 9] };
        let mut rng = RngStream::new(5);
        let net = PolicyNetwork::<f32>::init(shape, &mut rng);
        let obs = Array2::zeros((3, 7));
        let mut hidden = net.zero_hidden(3);
        let (logits, _) = net.step_inference(obs.view(), &mut hidden);
        assert_eq!(logits.len(), 2);
        assert_eq!(logits[0].dim(), (3, 5));
        assert_eq!(logits[1].dim(), (3, 9));
    }

    #[test]
    fn tape_forward_matches_inference_forward() {
        let mut rng = RngStream::new(7);
        let net = PolicyNetwork::<f64>::init(small_shape(), &mut rng);
        let obs = Array2::from_shape_simple_fn((6, 5), || rng.normal());
        let mut hidden = Array2::from_shape_simple_fn((6, 8), || rng.normal() * 0.3);
        let hidden0 = hidden.clone();

        let (logits, value) = net.step_inference(obs.view(), &mut hidden);

        let mut tape = Tape::new();
        let vars = net.tape_params(&mut tape);
        let obs_v = tape.constant(obs);
        let hid_v = tape.constant(hidden0);
        let (tl, tv, th) = net.tape_step(&mut tape, &vars, obs_v, hid_v);

        let max_diff = |a: &Array2<f64>, b: &Array2<f64>| {
            a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        assert!(max_diff(&logits[0], tape.value(tl[0])) < 1e-12);
        assert!(max_diff(&hidden, tape.value(th)) < 1e-12);
        let tape_value = tape.value(tv).column(0).to_owned();
        for (a, b) in value.iter().zip(tape_value.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_blocks_have_orthonormal_columns() {
        let mut rng = RngStream::new(9);
        let q = orthogonal_matrix(12, 4, &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let dot = q.column(i).dot(&q.column(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9, "col {i}.{j} dot {dot}");
            }
        }
        let wide = orthogonal_matrix(3, 7, &mut rng);
        for i in 0..3 {
            let dot = wide.row(i).dot(&wide.row(i));
            assert!((dot - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fresh_hidden_state_forgets_the_previous_episode() {
        let mut rng = RngStream::new(11);
        let net = PolicyNetwork::<f64>::init(small_shape(), &mut rng);
        let obs = Array2::from_shape_simple_fn((1, 5), || rng.normal());

        // Run a long first episode, then reset the hidden state.
        let mut hidden = net.zero_hidden(1);
        for _ in 0..10 {
            let junk = Array2::from_shape_simple_fn((1, 5), || rng.normal());
            net.step_inference(junk.view(), &mut hidden);
        }
        let mut fresh = net.zero_hidden(1);
        let (l_fresh, v_fresh) = net.step_inference(obs.view(), &mut fresh);
        let mut fresh2 = net.zero_hidden(1);
        let (l_again, v_again) = net.step_inference(obs.view(), &mut fresh2);
        assert_eq!(l_fresh[0], l_again[0]);
        assert_eq!(v_fresh, v_again);
    }

    #[test]
    fn f32_roundtrip_preserves_f32_params() {
        let mut rng = RngStream::new(13);
        let net = PolicyNetwork::<f32>::init(small_shape(), &mut rng);
        let raw = net.params_f32();
        let back = PolicyNetwork::<f32>::from_f32(net.shape.clone(), &raw);
        assert_eq!(net.params, back.params);
    }
}
