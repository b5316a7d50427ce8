use super::gemm::gemm;
use super::{Tensor, EPS_L2};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `op(a) . op(b)` where the flags transpose their operand.
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    /// Adds a `[1 x c]` bias row to every row of `a`.
    AddBias { a: Var, bias: Var },
    Add { a: Var, b: Var },
    /// Elementwise product.
    Mul { a: Var, b: Var },
    Relu { a: Var },
    Scale { a: Var, factor: f64 },
    AddScalar { a: Var },
    /// Softmax over each row independently.
    SoftmaxRows { a: Var },
    /// `x / max(||x||_2, EPS_L2)` over the whole buffer.
    L2Normalize { a: Var },
    /// Row-wise L2 normalization with the same guard.
    L2NormalizeRows { a: Var },
    ConcatCols { a: Var, b: Var },
    ConcatRows { parts: Vec<Var> },
    SliceRows { a: Var, start: usize, len: usize },
    /// Column sums: `[r x c] -> [1 x c]`.
    SumRows { a: Var },
    /// Sum of every element: `[r x c] -> [1 x 1]`.
    SumAll { a: Var },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by a backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Wengert list: ops are recorded in execution order, which is a topological
/// order of the graph, so the backward sweep walks ids in reverse and sees
/// every node after all of its consumers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant or parameter value.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        let node = self
            .nodes
            .get(v.0)
            .ok_or_else(|| Error::contract(format!("variable {} is not on this tape", v.0)))?;
        node.value.dims2()
    }

    /// `op(a) . op(b)`; the flags transpose the corresponding operand.
    pub fn matmul_with(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a)?;
        let (br, bc) = self.dims(b)?;
        let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if ka != kb {
            return Err(Error::contract(format!(
                "matmul inner dimensions differ: lhs [{m}x{ka}] rhs [{kb}x{n}] \
                 (physical [{ar}x{ac}]{} and [{br}x{bc}]{})",
                if ta { " transposed" } else { "" },
                if tb { " transposed" } else { "" },
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            &mut out,
            m,
            n,
            ka,
            1.0,
            self.nodes[a.0].value.data(),
            ar,
            ac,
            ta,
            self.nodes[b.0].value.data(),
            br,
            bc,
            tb,
            0.0,
        );
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul { a, b, ta, tb }, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_with(a, false, b, false)
    }

    /// `a . b^T`; the shape used by linear layers with `[out x in]` weights.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_with(a, false, b, true)
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let (br, bc) = self.dims(bias)?;
        if br != 1 || bc != c {
            return Err(Error::contract(format!(
                "bias [{br}x{bc}] does not broadcast over [{r}x{c}]"
            )));
        }
        let mut out = self.nodes[a.0].value.data().to_vec();
        let b_data = self.nodes[bias.0].value.data();
        for row in 0..r {
            for col in 0..c {
                out[row * c + col] += b_data[col];
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::AddBias { a, bias }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ar, ac) = self.dims(a)?;
        let (br, bc) = self.dims(b)?;
        if (ar, ac) != (br, bc) {
            return Err(Error::contract(format!(
                "{what} shape mismatch: [{ar}x{ac}] vs [{br}x{bc}]"
            )));
        }
        Ok((ar, ac))
    }

    /// ReLU; the subgradient at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|x| x.max(0.0))
            .collect();
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::Relu { a }, value))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let out: Vec<f64> = self.nodes[a.0].value.data().iter().map(|x| x * factor).collect();
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::Scale { a, factor }, value))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let out: Vec<f64> = self.nodes[a.0].value.data().iter().map(|x| x + offset).collect();
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::AddScalar { a }, value))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.nodes[a.0].value.data();
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            let src = &x[row * c..(row + 1) * c];
            let dst = &mut out[row * c..(row + 1) * c];
            let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::SoftmaxRows { a }, value))
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.nodes[a.0].value.data();
        let denom = l2_norm(x).max(EPS_L2);
        let out: Vec<f64> = x.iter().map(|v| v / denom).collect();
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::L2Normalize { a }, value))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.nodes[a.0].value.data();
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            let src = &x[row * c..(row + 1) * c];
            let denom = l2_norm(src).max(EPS_L2);
            for (d, s) in out[row * c..(row + 1) * c].iter_mut().zip(src) {
                *d = s / denom;
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::L2NormalizeRows { a }, value))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a)?;
        let (br, bc) = self.dims(b)?;
        if ar != br {
            return Err(Error::contract(format!(
                "concat_cols row counts differ: [{ar}x{ac}] vs [{br}x{bc}]"
            )));
        }
        let xa = self.nodes[a.0].value.data();
        let xb = self.nodes[b.0].value.data();
        let mut out = Vec::with_capacity(ar * (ac + bc));
        for row in 0..ar {
            out.extend_from_slice(&xa[row * ac..(row + 1) * ac]);
            out.extend_from_slice(&xb[row * bc..(row + 1) * bc]);
        }
        let value = Tensor::matrix(ar, ac + bc, out)?;
        Ok(self.push(Op::ConcatCols { a, b }, value))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows needs at least one part"));
        }
        let (_, c) = self.dims(parts[0])?;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p)?;
            if pc != c {
                return Err(Error::contract(format!(
                    "concat_rows column counts differ: {c} vs [{pr}x{pc}]"
                )));
            }
            rows += pr;
        }
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(self.nodes[p.0].value.data());
        }
        let value = Tensor::matrix(rows, c, out)?;
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if start + len > r {
            return Err(Error::contract(format!(
                "slice_rows {start}..{} out of range for [{r}x{c}]",
                start + len
            )));
        }
        let out = self.nodes[a.0].value.data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::matrix(len, c, out)?;
        Ok(self.push(Op::SliceRows { a, start, len }, value))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let x = self.nodes[a.0].value.data();
        let mut out = vec![0.0; c];
        for row in 0..r {
            for col in 0..c {
                out[col] += x[row * c + col];
            }
        }
        let value = Tensor::matrix(1, c, out)?;
        Ok(self.push(Op::SumRows { a }, value))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let x = self.nodes[a.0].value.data();
        let total: f64 = x.iter().sum();
        self.dims(a)?;
        Ok(self.push(Op::SumAll { a }, Tensor::scalar(total)))
    }

    /// Reverse sweep seeded with `d loss / d loss = 1`; `loss` must be
    /// `[1 x 1]`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.dims(loss)?;
        if (r, c) != (1, 1) {
            return Err(Error::contract(format!(
                "backward root must be scalar, got [{r}x{c}]"
            )));
        }
        self.backward_seeded(&[(loss, Tensor::scalar(1.0))])
    }

    /// Reverse sweep from arbitrary seeds. Each seed tensor must match the
    /// shape of its variable; seeds on the same variable accumulate.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        for (var, seed) in seeds {
            let node = self
                .nodes
                .get(var.0)
                .ok_or_else(|| Error::contract(format!("seed variable {} is not on this tape", var.0)))?;
            if seed.shape() != node.value.shape() {
                return Err(Error::contract(format!(
                    "seed shape {:?} does not match variable shape {:?}",
                    seed.shape(),
                    node.value.shape()
                )));
            }
            let slot = grads[var.0].get_or_insert_with(|| vec![0.0; seed.len()]);
            for (g, s) in slot.iter_mut().zip(seed.data()) {
                *g += s;
            }
        }
        for id in (0..n).rev() {
            let gout = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.apply_vjp(id, &gout, &mut grads);
            grads[id] = Some(gout);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|data| {
                    Tensor::new(self.nodes[id].value.shape().to_vec(), data)
                        .expect("gradient buffer matches value shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn apply_vjp(&self, id: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        // Fetches (allocating on first touch) the gradient buffer of `v`.
        macro_rules! acc {
            ($grads:expr, $v:expr) => {{
                let v: Var = $v;
                let len = self.nodes[v.0].value.len();
                slot($grads, v, len)
            }};
        }
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (m, n) = {
                    let v = &self.nodes[id].value;
                    (v.rows(), v.cols())
                };
                let (ar, ac) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let (br, bc) = (self.nodes[b.0].value.rows(), self.nodes[b.0].value.cols());
                let k = if *ta { ar } else { ac };
                let a_data = self.nodes[a.0].value.data();
                let b_data = self.nodes[b.0].value.data();
                {
                    // An untouched slot can be overwritten instead of
                    // accumulated into; same below and in the other arms.
                    let beta = if grads[a.0].is_none() { 0.0 } else { 1.0 };
                    let da = acc!(grads, *a);
                    if !*ta {
                        // dA += G . op(B)^T
                        gemm(da, m, k, n, 1.0, gout, m, n, false, b_data, br, bc, !*tb, beta);
                    } else {
                        // A is stored transposed: dA += op(B) . G^T
                        gemm(da, k, m, n, 1.0, b_data, br, bc, *tb, gout, m, n, true, beta);
                    }
                }
                {
                    let beta = if grads[b.0].is_none() { 0.0 } else { 1.0 };
                    let db = acc!(grads, *b);
                    if !*tb {
                        // dB += op(A)^T . G
                        gemm(db, k, n, m, 1.0, a_data, ar, ac, !*ta, gout, m, n, false, beta);
                    } else {
                        // B is stored transposed: dB += G^T . op(A)
                        gemm(db, n, k, m, 1.0, gout, m, n, true, a_data, ar, ac, *ta, beta);
                    }
                }
            }
            Op::AddBias { a, bias } => {
                let (r, c) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                {
                    let da = acc!(grads, *a);
                    for (d, g) in da.iter_mut().zip(gout) {
                        *d += g;
                    }
                }
                let dbias = acc!(grads, *bias);
                for row in 0..r {
                    for col in 0..c {
                        dbias[col] += gout[row * c + col];
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    let dv = acc!(grads, *v);
                    for (d, g) in dv.iter_mut().zip(gout) {
                        *d += g;
                    }
                }
            }
            Op::Mul { a, b } => {
                let b_data = self.nodes[b.0].value.data();
                let a_data = self.nodes[a.0].value.data();
                {
                    let fresh = grads[a.0].is_none();
                    let da = acc!(grads, *a);
                    if fresh {
                        for ((d, g), y) in da.iter_mut().zip(gout).zip(b_data) {
                            *d = g * y;
                        }
                    } else {
                        for ((d, g), y) in da.iter_mut().zip(gout).zip(b_data) {
                            *d += g * y;
                        }
                    }
                }
                let fresh = grads[b.0].is_none();
                let db = acc!(grads, *b);
                if fresh {
                    for ((d, g), x) in db.iter_mut().zip(gout).zip(a_data) {
                        *d = g * x;
                    }
                } else {
                    for ((d, g), x) in db.iter_mut().zip(gout).zip(a_data) {
                        *d += g * x;
                    }
                }
            }
            Op::Relu { a } => {
                let x = self.nodes[a.0].value.data();
                let fresh = grads[a.0].is_none();
                let da = acc!(grads, *a);
                if fresh {
                    for ((d, g), x) in da.iter_mut().zip(gout).zip(x) {
                        *d = if *x > 0.0 { *g } else { 0.0 };
                    }
                } else {
                    for ((d, g), x) in da.iter_mut().zip(gout).zip(x) {
                        if *x > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::Scale { a, factor } => {
                let factor = *factor;
                let da = acc!(grads, *a);
                for (d, g) in da.iter_mut().zip(gout) {
                    *d += g * factor;
                }
            }
            Op::AddScalar { a } => {
                let da = acc!(grads, *a);
                for (d, g) in da.iter_mut().zip(gout) {
                    *d += g;
                }
            }
            Op::SoftmaxRows { a } => {
                // Only the softmax output enters the VJP.
                let (r, c) = {
                    let v = &self.nodes[id].value;
                    (v.rows(), v.cols())
                };
                let out = self.nodes[id].value.data();
                let da = acc!(grads, *a);
                for row in 0..r {
                    let y = &out[row * c..(row + 1) * c];
                    let g = &gout[row * c..(row + 1) * c];
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    for col in 0..c {
                        da[row * c + col] += y[col] * (g[col] - dot);
                    }
                }
            }
            Op::L2Normalize { a } => {
                let x = self.nodes[a.0].value.data();
                let y = self.nodes[id].value.data();
                let norm = l2_norm(x);
                let da = acc!(grads, *a);
                l2_normalize_vjp(da, gout, y, norm);
            }
            Op::L2NormalizeRows { a } => {
                let x = self.nodes[a.0].value.data();
                let y = self.nodes[id].value.data();
                let (r, c) = {
                    let v = &self.nodes[id].value;
                    (v.rows(), v.cols())
                };
                let da = acc!(grads, *a);
                for row in 0..r {
                    let span = row * c..(row + 1) * c;
                    let norm = l2_norm(&x[span.clone()]);
                    l2_normalize_vjp(&mut da[span.clone()], &gout[span.clone()], &y[span], norm);
                }
            }
            Op::ConcatCols { a, b } => {
                let ac = self.nodes[a.0].value.cols();
                let bc = self.nodes[b.0].value.cols();
                let r = self.nodes[a.0].value.rows();
                let c = ac + bc;
                {
                    let da = acc!(grads, *a);
                    for row in 0..r {
                        for col in 0..ac {
                            da[row * ac + col] += gout[row * c + col];
                        }
                    }
                }
                let db = acc!(grads, *b);
                for row in 0..r {
                    for col in 0..bc {
                        db[row * bc + col] += gout[row * c + ac + col];
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let c = self.nodes[id].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pr = self.nodes[p.0].value.rows();
                    let dp = acc!(grads, p);
                    for (d, g) in dp.iter_mut().zip(&gout[offset * c..(offset + pr) * c]) {
                        *d += g;
                    }
                    offset += pr;
                }
            }
            Op::SliceRows { a, start, len } => {
                let c = self.nodes[a.0].value.cols();
                let da = acc!(grads, *a);
                for (d, g) in da[start * c..(start + len) * c].iter_mut().zip(gout) {
                    *d += g;
                }
            }
            Op::SumRows { a } => {
                let (r, c) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let da = acc!(grads, *a);
                for row in 0..r {
                    for col in 0..c {
                        da[row * c + col] += gout[col];
                    }
                }
            }
            Op::SumAll { a } => {
                let g = gout[0];
                let da = acc!(grads, *a);
                for d in da.iter_mut() {
                    *d += g;
                }
            }
        }
    }
}

fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// VJP of `y = x / max(norm, EPS_L2)`. Below the guard the denominator is
/// constant, so the map is linear.
fn l2_normalize_vjp(dx: &mut [f64], g: &[f64], y: &[f64], norm: f64) {
    if norm >= EPS_L2 {
        let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
        for ((d, g), y) in dx.iter_mut().zip(g).zip(y) {
            *d += (g - y * dot) / norm;
        }
    } else {
        for (d, g) in dx.iter_mut().zip(g) {
            *d += g / EPS_L2;
        }
    }
}
