//! Reverse-mode automatic differentiation over batched matrices.
//!
//! A [`Tape`] records eagerly-evaluated ops on `(batch, dim)` matrices and
//! replays them backwards to produce gradients with respect to the flat
//! parameter vector. Parameters enter through [`Tape::param`], which ties a
//! node to a span of the flat vector; constants (observations, advantages,
//! old log-probabilities, return targets) enter through [`Tape::constant`]
//! and act as stop-gradients. The op set is exactly what a recurrent
//! actor-critic with a clipped surrogate loss needs.

use ndarray::{Array2, Axis};

/// Scalar type the network math is generic over: f32 for training speed,
/// f64 for finite-difference verification.
pub trait Scalar:
    ndarray::LinalgScalar + num_traits::Float + ndarray::ScalarOperand + Send + Sync + std::fmt::Debug + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param { offset: usize },
    MatMul(usize, usize),
    /// Broadcast-add a (1, m) row to a (B, m) matrix.
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// value * k + c, elementwise.
    /// value * k + c; the shift is kept for the forward value only.
    AffineScalar(usize, f64, #[allow(dead_code)] f64),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    LogSoftmax(usize),
    /// Per-row column gather: row r of the output is `src[r, indices[r]]`.
    GatherCol { src: usize, indices: Vec<usize> },
    SumCols(usize),
    Clamp(usize, f64, f64),
    Min(usize, usize),
    MeanAll(usize),
    SliceCols { src: usize, start: usize, len: usize },
    /// x W + b in one node.
    Affine { x: usize, w: usize, b: usize },
    /// tanh(x W + b) in one node.
    AffineTanh { x: usize, w: usize, b: usize },
    /// A whole gated recurrent cell step; the output is the next hidden
    /// state and the gate activations are cached for the backward pass.
    GruStep { x: usize, h: usize, w_ih: usize, w_hh: usize, b_ih: usize, b_hh: usize },
}

/// Gate activations kept around for the fused GRU backward.
struct GruCache<T: Scalar> {
    r: Array2<T>,
    z: Array2<T>,
    n: Array2<T>,
    gh_n: Array2<T>,
}

struct Node<T: Scalar> {
    value: Array2<T>,
    op: Op,
    cache: Option<Box<GruCache<T>>>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op, cache: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[(0, 0)].to_f64()
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Const)
    }

    /// Bind a `(rows, cols)` node to `flat[offset..offset + rows*cols]`
    /// (row-major). Gradients land in the same span.
    pub fn param(&mut self, flat: &[T], offset: usize, rows: usize, cols: usize) -> Var {
        let value = Array2::from_shape_vec((rows, cols), flat[offset..offset + rows * cols].to_vec())
            .expect("parameter span");
        self.push(value, Op::Param { offset })
    }

    pub fn param_span(&mut self, flat: &[T], span: (usize, usize, usize)) -> Var {
        self.param(flat, span.0, span.1, span.2)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.nodes[row.0].value.nrows(), 1);
        let value = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(value, Op::AddRow(a.0, row.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let (kk, cc) = (T::from_f64(k), T::from_f64(c));
        let value = self.nodes[a.0].value.mapv(|x| x * kk + cc);
        self.push(value, Op::AffineScalar(a.0, k, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = T::one();
        let value = self.nodes[a.0].value.mapv(|x| one / (one + (-x).exp()));
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.tanh());
        self.push(value, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.exp());
        self.push(value, Op::Exp(a.0))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for &v in row.iter() {
                total = total + (v - max).exp();
            }
            let log_total = total.ln();
            row.mapv_inplace(|v| v - max - log_total);
        }
        self.push(value, Op::LogSoftmax(a.0))
    }

    pub fn gather_col(&mut self, src: Var, indices: Vec<usize>) -> Var {
        let source = &self.nodes[src.0].value;
        debug_assert_eq!(source.nrows(), indices.len());
        let mut value = Array2::zeros((indices.len(), 1));
        for (r, &c) in indices.iter().enumerate() {
            value[(r, 0)] = source[(r, c)];
        }
        self.push(value, Op::GatherCol { src: src.0, indices })
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(a.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        let value = self.nodes[a.0].value.mapv(|x| x.max(l).min(h));
        self.push(value, Op::Clamp(a.0, lo, hi))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::Zip::from(&self.nodes[a.0].value)
            .and(&self.nodes[b.0].value)
            .map_collect(|&x, &y| x.min(y));
        self.push(value, Op::Min(a.0, b.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.0].value;
        let count = T::from_f64((src.nrows() * src.ncols()) as f64);
        let mut total = T::zero();
        for &v in src.iter() {
            total = total + v;
        }
        let value = Array2::from_elem((1, 1), total / count);
        self.push(value, Op::MeanAll(a.0))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[src.0].value.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols { src: src.0, start, len })
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut value = self.nodes[x.0].value.dot(&self.nodes[w.0].value);
        add_bias(&mut value, &self.nodes[b.0].value);
        self.push(value, Op::Affine { x: x.0, w: w.0, b: b.0 })
    }

    pub fn linear_tanh(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut value = self.nodes[x.0].value.dot(&self.nodes[w.0].value);
        add_bias(&mut value, &self.nodes[b.0].value);
        value.mapv_inplace(|v| v.tanh());
        self.push(value, Op::AffineTanh { x: x.0, w: w.0, b: b.0 })
    }

    /// One GRU cell step: gates from `x W_ih + b_ih` and `h W_hh + b_hh`
    /// (gate order r, z, n along the 3h axis), output `(1-z) n + z h`.
    pub fn gru_step(&mut self, x: Var, h: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Var {
        let mut gi = self.nodes[x.0].value.dot(&self.nodes[w_ih.0].value);
        add_bias(&mut gi, &self.nodes[b_ih.0].value);
        let hidden = &self.nodes[h.0].value;
        let mut gh = hidden.dot(&self.nodes[w_hh.0].value);
        add_bias(&mut gh, &self.nodes[b_hh.0].value);

        let (_, three_h) = gi.dim();
        let hd = three_h / 3;
        let one = T::one();
        let r = ndarray::Zip::from(gi.slice(ndarray::s![.., 0..hd]))
            .and(gh.slice(ndarray::s![.., 0..hd]))
            .map_collect(|&a, &b| sigmoid(a + b));
        let z = ndarray::Zip::from(gi.slice(ndarray::s![.., hd..2 * hd]))
            .and(gh.slice(ndarray::s![.., hd..2 * hd]))
            .map_collect(|&a, &b| sigmoid(a + b));
        let gh_n = gh.slice(ndarray::s![.., 2 * hd..3 * hd]).to_owned();
        let n = ndarray::Zip::from(gi.slice(ndarray::s![.., 2 * hd..3 * hd]))
            .and(&r)
            .and(&gh_n)
            .map_collect(|&a, &rv, &ghn| (a + rv * ghn).tanh());
        let next = ndarray::Zip::from(&z)
            .and(&n)
            .and(hidden)
            .map_collect(|&zv, &nv, &hv| (one - zv) * nv + zv * hv);
        let var = self.push(
            next,
            Op::GruStep { x: x.0, h: h.0, w_ih: w_ih.0, w_hh: w_hh.0, b_ih: b_ih.0, b_hh: b_hh.0 },
        );
        self.nodes[var.0].cache = Some(Box::new(GruCache { r, z, n, gh_n }));
        var
    }

    /// Whether gradients can flow into node `i` (transitively reaches a
    /// parameter). Gradient work into pure-constant subgraphs is skipped.
    fn reaches_param(&self, wants: &mut [bool]) {
        for i in 0..self.nodes.len() {
            let hit = match &self.nodes[i].op {
                Op::Const => false,
                Op::Param { .. } => true,
                Op::MatMul(a, b)
                | Op::AddRow(a, b)
                | Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::Mul(a, b)
                | Op::Min(a, b) => wants[*a] || wants[*b],
                Op::AffineScalar(a, _, _)
                | Op::Sigmoid(a)
                | Op::Tanh(a)
                | Op::Exp(a)
                | Op::LogSoftmax(a)
                | Op::SumCols(a)
                | Op::Clamp(a, _, _)
                | Op::MeanAll(a) => wants[*a],
                Op::GatherCol { src, .. } | Op::SliceCols { src, .. } => wants[*src],
                Op::Affine { x, w, b } | Op::AffineTanh { x, w, b } => {
                    wants[*x] || wants[*w] || wants[*b]
                }
                Op::GruStep { x, h, w_ih, w_hh, b_ih, b_hh } => {
                    wants[*x] || wants[*h] || wants[*w_ih] || wants[*w_hh] || wants[*b_ih]
                        || wants[*b_hh]
                }
            };
            wants[i] = hit;
        }
    }

    /// Reverse pass from a scalar loss node; returns the gradient of the
    /// loss with respect to the flat parameter vector (length `param_len`).
    pub fn backward(&self, loss: Var, param_len: usize) -> Vec<T> {
        debug_assert_eq!(self.nodes[loss.0].value.dim(), (1, 1));
        let mut wants = vec![false; self.nodes.len()];
        self.reaches_param(&mut wants);
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));
        let mut flat = vec![T::zero(); param_len];

        for i in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param { offset } => {
                    for (dst, &g) in flat[*offset..*offset + grad.len()].iter_mut().zip(grad.iter())
                    {
                        *dst = *dst + g;
                    }
                }
                Op::MatMul(a, b) => {
                    if wants[*a] {
                        accumulate(&mut grads[*a], grad.dot(&self.nodes[*b].value.t()));
                    }
                    if wants[*b] {
                        accumulate(&mut grads[*b], self.nodes[*a].value.t().dot(&grad));
                    }
                }
                Op::AddRow(a, row) => {
                    if wants[*row] {
                        let grow = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads[*row], grow);
                    }
                    if wants[*a] {
                        accumulate(&mut grads[*a], grad);
                    }
                }
                Op::Add(a, b) => {
                    if wants[*a] {
                        accumulate(&mut grads[*a], grad.clone());
                    }
                    if wants[*b] {
                        accumulate(&mut grads[*b], grad);
                    }
                }
                Op::Sub(a, b) => {
                    if wants[*b] {
                        accumulate(&mut grads[*b], grad.mapv(|g| -g));
                    }
                    if wants[*a] {
                        accumulate(&mut grads[*a], grad);
                    }
                }
                Op::Mul(a, b) => {
                    if wants[*a] {
                        accumulate(&mut grads[*a], &grad * &self.nodes[*b].value);
                    }
                    if wants[*b] {
                        accumulate(&mut grads[*b], &grad * &self.nodes[*a].value);
                    }
                }
                Op::AffineScalar(a, k, _) => {
                    let kk = T::from_f64(*k);
                    accumulate(&mut grads[*a], grad.mapv(|g| g * kk));
                }
                Op::Sigmoid(a) => {
                    let one = T::one();
                    let ga = ndarray::Zip::from(&grad)
                        .and(&self.nodes[i].value)
                        .map_collect(|&g, &y| g * y * (one - y));
                    accumulate(&mut grads[*a], ga);
                }
                Op::Tanh(a) => {
                    let one = T::one();
                    let ga = ndarray::Zip::from(&grad)
                        .and(&self.nodes[i].value)
                        .map_collect(|&g, &y| g * (one - y * y));
                    accumulate(&mut grads[*a], ga);
                }
                Op::Exp(a) => {
                    let ga = &grad * &self.nodes[i].value;
                    accumulate(&mut grads[*a], ga);
                }
                Op::LogSoftmax(a) => {
                    // d/dx log_softmax = g - softmax * rowsum(g)
                    let y = &self.nodes[i].value;
                    let rowsum = grad.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = ndarray::Zip::from(&grad)
                        .and(y)
                        .and(&rowsum.broadcast(grad.dim()).unwrap())
                        .map_collect(|&g, &logp, &rs| g - logp.exp() * rs);
                    accumulate(&mut grads[*a], ga);
                }
                Op::GatherCol { src, indices } => {
                    let mut ga = Array2::zeros(self.nodes[*src].value.dim());
                    for (r, &c) in indices.iter().enumerate() {
                        ga[(r, c)] = grad[(r, 0)];
                    }
                    accumulate(&mut grads[*src], ga);
                }
                Op::SumCols(a) => {
                    let dim = self.nodes[*a].value.dim();
                    let ga = grad.broadcast(dim).unwrap().to_owned();
                    accumulate(&mut grads[*a], ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (l, h) = (T::from_f64(*lo), T::from_f64(*hi));
                    let ga = ndarray::Zip::from(&grad)
                        .and(&self.nodes[*a].value)
                        .map_collect(|&g, &x| if x >= l && x <= h { g } else { T::zero() });
                    accumulate(&mut grads[*a], ga);
                }
                Op::Min(a, b) => {
                    let zero = T::zero();
                    let ga = ndarray::Zip::from(&grad)
                        .and(&self.nodes[*a].value)
                        .and(&self.nodes[*b].value)
                        .map_collect(|&g, &x, &y| if x <= y { g } else { zero });
                    let gb = ndarray::Zip::from(&grad)
                        .and(&self.nodes[*a].value)
                        .and(&self.nodes[*b].value)
                        .map_collect(|&g, &x, &y| if x > y { g } else { zero });
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::MeanAll(a) => {
                    let dim = self.nodes[*a].value.dim();
                    let scale = T::from_f64(1.0 / (dim.0 * dim.1) as f64);
                    let g = grad[(0, 0)] * scale;
                    accumulate(&mut grads[*a], Array2::from_elem(dim, g));
                }
                Op::SliceCols { src, start, len } => {
                    let mut ga = Array2::zeros(self.nodes[*src].value.dim());
                    ga.slice_mut(ndarray::s![.., *start..*start + *len]).assign(&grad);
                    accumulate(&mut grads[*src], ga);
                }
                Op::Affine { x, w, b } => {
                    if wants[*x] {
                        accumulate(&mut grads[*x], grad.dot(&self.nodes[*w].value.t()));
                    }
                    if wants[*w] {
                        accumulate(&mut grads[*w], self.nodes[*x].value.t().dot(&grad));
                    }
                    if wants[*b] {
                        let gb = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::AffineTanh { x, w, b } => {
                    let one = T::one();
                    let pre = ndarray::Zip::from(&grad)
                        .and(&self.nodes[i].value)
                        .map_collect(|&g, &y| g * (one - y * y));
                    if wants[*x] {
                        accumulate(&mut grads[*x], pre.dot(&self.nodes[*w].value.t()));
                    }
                    if wants[*w] {
                        accumulate(&mut grads[*w], self.nodes[*x].value.t().dot(&pre));
                    }
                    if wants[*b] {
                        let gb = pre.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::GruStep { x, h, w_ih, w_hh, b_ih, b_hh } => {
                    let cache = self.nodes[i].cache.as_ref().expect("gru cache");
                    let hidden = &self.nodes[*h].value;
                    let (b_rows, hd) = cache.r.dim();
                    let one = T::one();
                    let da_n = ndarray::Zip::from(&grad)
                        .and(&cache.z)
                        .and(&cache.n)
                        .map_collect(|&g, &z, &n| g * (one - z) * (one - n * n));
                    let da_z = ndarray::Zip::from(&grad)
                        .and(hidden)
                        .and(&cache.n)
                        .and(&cache.z)
                        .map_collect(|&g, &hv, &n, &z| g * (hv - n) * z * (one - z));
                    let da_r = ndarray::Zip::from(&da_n)
                        .and(&cache.gh_n)
                        .and(&cache.r)
                        .map_collect(|&dan, &ghn, &r| dan * ghn * r * (one - r));
                    let dgh_n = ndarray::Zip::from(&da_n)
                        .and(&cache.r)
                        .map_collect(|&dan, &r| dan * r);
                    let dh_direct = ndarray::Zip::from(&grad)
                        .and(&cache.z)
                        .map_collect(|&g, &z| g * z);
                    // Gate-space gradients, laid out (B, 3h) as [r | z | n].
                    let mut dgi = Array2::zeros((b_rows, 3 * hd));
                    let mut dgh = Array2::zeros((b_rows, 3 * hd));
                    dgi.slice_mut(ndarray::s![.., 0..hd]).assign(&da_r);
                    dgi.slice_mut(ndarray::s![.., hd..2 * hd]).assign(&da_z);
                    dgi.slice_mut(ndarray::s![.., 2 * hd..3 * hd]).assign(&da_n);
                    dgh.slice_mut(ndarray::s![.., 0..hd]).assign(&da_r);
                    dgh.slice_mut(ndarray::s![.., hd..2 * hd]).assign(&da_z);
                    dgh.slice_mut(ndarray::s![.., 2 * hd..3 * hd]).assign(&dgh_n);
                    if wants[*x] {
                        accumulate(&mut grads[*x], dgi.dot(&self.nodes[*w_ih].value.t()));
                    }
                    if wants[*h] {
                        let gh_total = dh_direct + dgh.dot(&self.nodes[*w_hh].value.t());
                        accumulate(&mut grads[*h], gh_total);
                    }
                    if wants[*w_ih] {
                        accumulate(&mut grads[*w_ih], self.nodes[*x].value.t().dot(&dgi));
                    }
                    if wants[*w_hh] {
                        accumulate(&mut grads[*w_hh], hidden.t().dot(&dgh));
                    }
                    if wants[*b_ih] {
                        let gb_ih = dgi.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads[*b_ih], gb_ih);
                    }
                    if wants[*b_hh] {
                        let gb_hh = dgh.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads[*b_hh], gb_hh);
                    }
                }
            }
        }
        flat
    }
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    let one = T::one();
    one / (one + (-v).exp())
}

fn add_bias<T: Scalar>(m: &mut Array2<T>, bias: &Array2<T>) {
    debug_assert_eq!(bias.nrows(), 1);
    let row = bias.row(0);
    for mut r in m.rows_mut() {
        r.zip_mut_with(&row, |x, &b| *x = *x + b);
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Array2<T>>, g: Array2<T>) {
    match slot {
        Some(existing) => *existing = &*existing + &g,
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let flat = vec![1.0f64, 2.0, 3.0, 4.0];
        let mut tape = Tape::new();
        let p = tape.param(&flat, 0, 2, 2);
        let ones = tape.constant(Array2::from_elem((2, 2), 1.0));
        let prod = tape.mul(p, ones);
        let mean = tape.mean_all(prod);
        let total = tape.affine(mean, 4.0, 0.0); // sum = mean * count
        let grad = tape.backward(total, flat.len());
        assert_eq!(grad, vec![1.0; 4]);
    }

    #[test]
    fn matmul_gradients_match_by_hand() {
        // f(W) = mean(x W), x = [1, 2], W 2x2 -> df/dW = [[.5, .5], [1, 1]]
        let flat = vec![0.1f64, 0.2, 0.3, 0.4];
        let mut tape = Tape::new();
        let w = tape.param(&flat, 0, 2, 2);
        let x = tape.constant(array![[1.0, 2.0]]);
        let y = tape.matmul(x, w);
        let loss = tape.mean_all(y);
        let grad = tape.backward(loss, 4);
        assert_eq!(grad, vec![0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn constants_stop_gradients() {
        let flat = vec![2.0f64];
        let mut tape = Tape::new();
        let p = tape.param(&flat, 0, 1, 1);
        let detached = tape.constant(Array2::from_elem((1, 1), 5.0));
        let y = tape.mul(p, detached);
        let loss = tape.mean_all(y);
        let grad = tape.backward(loss, 1);
        assert_eq!(grad, vec![5.0]);
    }

    #[test]
    fn log_softmax_rows_sum_to_one_in_probability() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(array![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]);
        let logp = tape.log_softmax(z);
        for row in tape.value(logp).rows() {
            let total: f64 = row.iter().map(|&lp| lp.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let flat = vec![3.0f64, 0.5];
        let mut tape = Tape::new();
        let p = tape.param(&flat, 0, 1, 2);
        let clamped = tape.clamp(p, 0.0, 1.0);
        let loss = tape.mean_all(clamped);
        let grad = tape.backward(loss, 2);
        assert_eq!(grad, vec![0.0, 0.5]);
    }

    #[test]
    fn min_routes_gradient_to_smaller_branch() {
        let flat = vec![1.0f64, 4.0];
        let mut tape = Tape::new();
        let a = tape.param(&flat, 0, 1, 1);
        let b = tape.param(&flat, 1, 1, 1);
        let m = tape.min(a, b);
        let loss = tape.mean_all(m);
        let grad = tape.backward(loss, 2);
        assert_eq!(grad, vec![1.0, 0.0]);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        // One compound expression exercising each op with a numeric check.
        let n = 6usize;
        let base: Vec<f64> = (0..n).map(|i| 0.3 + 0.1 * i as f64).collect();
        let eval = |flat: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let w = tape.param(flat, 0, 2, 3);
            let x = tape.constant(array![[0.5, -0.3], [1.0, 0.2]]);
            let h = tape.matmul(x, w); // (2, 3)
            let b = tape.param(flat, 3, 1, 3);
            let hb = tape.add_row(h, b);
            let s = tape.sigmoid(hb);
            let t = tape.tanh(hb);
            let st = tape.mul(s, t);
            let sl = tape.slice_cols(st, 0, 2);
            let sc = tape.sum_cols(sl);
            let e = tape.exp(sc);
            let logp = tape.log_softmax(hb);
            let picked = tape.gather_col(logp, vec![2, 0]);
            let diff = tape.sub(e, picked);
            let cl = tape.clamp(diff, -2.0, 2.0);
            let mn = tape.min(cl, picked);
            let af = tape.affine(mn, 1.3, -0.2);
            let loss = tape.mean_all(af);
            (tape.scalar(loss), tape.backward(loss, flat.len())).0
        };
        let grad = {
            let mut tape = Tape::new();
            let w = tape.param(&base, 0, 2, 3);
            let x = tape.constant(array![[0.5, -0.3], [1.0, 0.2]]);
            let h = tape.matmul(x, w);
            let b = tape.param(&base, 3, 1, 3);
            let hb = tape.add_row(h, b);
            let s = tape.sigmoid(hb);
            let t = tape.tanh(hb);
            let st = tape.mul(s, t);
            let sl = tape.slice_cols(st, 0, 2);
            let sc = tape.sum_cols(sl);
            let e = tape.exp(sc);
            let logp = tape.log_softmax(hb);
            let picked = tape.gather_col(logp, vec![2, 0]);
            let diff = tape.sub(e, picked);
            let cl = tape.clamp(diff, -2.0, 2.0);
            let mn = tape.min(cl, picked);
            let af = tape.affine(mn, 1.3, -0.2);
            let loss = tape.mean_all(af);
            tape.backward(loss, base.len())
        };
        let step = 1e-6;
        for i in 0..n {
            let mut plus = base.clone();
            plus[i] += step;
            let mut minus = base.clone();
            minus[i] -= step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            assert!(
                (numeric - grad[i]).abs() < 1e-6 * (1.0 + numeric.abs()),
                "param {i}: analytic {} vs numeric {numeric}",
                grad[i]
            );
        }
    }
}
