use std::collections::BTreeMap;
use std::collections::HashMap;

use super::{NumError, Real, Tensor};

/// Index of a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// Gradients keyed by parameter name, in name order.
pub type GradMap<R> = BTreeMap<String, Tensor<R>>;

/// Loss-side clamp bound: probabilities are pinned to
/// `[CLAMP, 1 - CLAMP]` inside the cross-entropy primitive only.
pub const PROB_CLAMP: f64 = 1e-7;

enum Op<R> {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Affine { x: TensorId, mul: R, add: R },
    Concat { xs: Vec<TensorId> },
    Slice { x: TensorId, start: usize },
    Sigmoid { x: TensorId },
    Tanh { x: TensorId },
    MaxReduce { xs: Vec<TensorId> },
    Sum { x: TensorId },
    Mean { x: TensorId },
    Bce { p: TensorId, labels: Vec<R> },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
}

/// Wengert tape: records primitive operations during the forward pass
/// and replays them in strict reverse order to accumulate adjoints.
///
/// A tape and its tensors belong to one worker at a time; there is no
/// internal locking. Parameters are registered by name and their data
/// is snapshotted, so later mutation of the source store cannot change
/// recorded values.
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
    params: Vec<(String, TensorId)>,
    by_name: HashMap<String, TensorId>,
    consumed: bool,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            by_name: HashMap::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    fn checked(&mut self, op: &'static str, value: Tensor<R>, node: Op<R>) -> Result<TensorId, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op });
        }
        Ok(self.push(value, node))
    }

    /// Record a constant input (word vectors, zero states, labels).
    pub fn leaf(&mut self, value: Tensor<R>) -> TensorId {
        self.push(value, Op::Leaf)
    }

    /// Register a named trainable parameter. Registering the same name
    /// twice returns the original id, so shared parameters accumulate
    /// gradients additively.
    pub fn param(&mut self, name: &str, value: &Tensor<R>) -> TensorId {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = self.push(value.clone(), Op::Leaf);
        self.params.push((name.to_string(), id));
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn value(&self, id: TensorId) -> &Tensor<R> {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    // ── Primitives ───────────────────────────────────────────────────

    /// Matrix product. Supports `[m,k] x [k,n] -> [m,n]` and the
    /// matrix-vector case `[m,k] x [k] -> [m]`. No other broadcasting.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || NumError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        match (sa.len(), sb.len()) {
            (2, 1) => {
                let (m, k) = (sa[0], sa[1]);
                if sb[0] != k {
                    return Err(mismatch());
                }
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let mut out = vec![R::zero(); m];
                for i in 0..m {
                    let row = &av[i * k..(i + 1) * k];
                    out[i] = row.iter().zip(bv).map(|(&w, &x)| w * x).sum();
                }
                self.checked("matmul", Tensor::vector(out), Op::MatMul { a, b })
            }
            (2, 2) => {
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if sb[0] != k {
                    return Err(mismatch());
                }
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let mut out = vec![R::zero(); m * n];
                for i in 0..m {
                    for p in 0..k {
                        let w = av[i * k + p];
                        let brow = &bv[p * n..(p + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, &x) in orow.iter_mut().zip(brow) {
                            *o = *o + w * x;
                        }
                    }
                }
                let t = Tensor::from_vec(vec![m, n], out)?;
                self.checked("matmul", t, Op::MatMul { a, b })
            }
            _ => Err(mismatch()),
        }
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    /// Element-wise product of equal-shaped tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumError> {
        self.zip("mul_elementwise", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(R, R) -> R,
        node: Op<R>,
    ) -> Result<TensorId, NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let shape = self.shape(a).to_vec();
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_vec(shape, data)?;
        self.checked(op, t, node)
    }

    /// `mul * x + add`, element-wise with scalar constants. Covers
    /// negation, `1 - x`, and constant scaling.
    pub fn affine(&mut self, x: TensorId, mul: R, add: R) -> Result<TensorId, NumError> {
        let shape = self.shape(x).to_vec();
        let data = self.nodes[x.0].value.data().iter().map(|&v| mul * v + add).collect();
        let t = Tensor::from_vec(shape, data)?;
        self.checked("affine", t, Op::Affine { x, mul, add })
    }

    /// Row-wise concatenation of vectors: `[d1], [d2], ... -> [d1+d2+...]`.
    pub fn concat(&mut self, xs: &[TensorId]) -> Result<TensorId, NumError> {
        if xs.is_empty() {
            return Err(NumError::Invalid {
                op: "concat_rows",
                msg: "no inputs".into(),
            });
        }
        let mut data = Vec::new();
        for &x in xs {
            if self.shape(x).len() != 1 {
                return Err(NumError::Invalid {
                    op: "concat_rows",
                    msg: format!("expected vectors, got shape {:?}", self.shape(x)),
                });
            }
            data.extend_from_slice(self.nodes[x.0].value.data());
        }
        self.checked("concat_rows", Tensor::vector(data), Op::Concat { xs: xs.to_vec() })
    }

    /// Contiguous vector slice `x[start .. start+len]`.
    pub fn slice(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId, NumError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 || start + len > shape[0] {
            return Err(NumError::Invalid {
                op: "slice",
                msg: format!("range {}..{} out of shape {:?}", start, start + len, shape),
            });
        }
        let data = self.nodes[x.0].value.data()[start..start + len].to_vec();
        self.checked("slice", Tensor::vector(data), Op::Slice { x, start })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId, NumError> {
        self.map("sigmoid", x, |v| R::one() / (R::one() + (-v).exp()), Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId, NumError> {
        self.map("tanh", x, |v| v.tanh(), Op::Tanh { x })
    }

    fn map(
        &mut self,
        op: &'static str,
        x: TensorId,
        f: impl Fn(R) -> R,
        node: Op<R>,
    ) -> Result<TensorId, NumError> {
        let shape = self.shape(x).to_vec();
        let data = self.nodes[x.0].value.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::from_vec(shape, data)?;
        self.checked(op, t, node)
    }

    /// Element-wise max over a set of equal-shaped tensors. Ties route
    /// the gradient to the earliest input, which keeps backward
    /// deterministic; the forward value is permutation-invariant.
    pub fn max_reduce(&mut self, xs: &[TensorId]) -> Result<TensorId, NumError> {
        if xs.is_empty() {
            return Err(NumError::Invalid {
                op: "max_elementwise_reduce",
                msg: "no inputs".into(),
            });
        }
        let shape = self.shape(xs[0]).to_vec();
        for &x in &xs[1..] {
            if self.shape(x) != shape.as_slice() {
                return Err(NumError::ShapeMismatch {
                    op: "max_elementwise_reduce",
                    lhs: shape,
                    rhs: self.shape(x).to_vec(),
                });
            }
        }
        let mut data = self.nodes[xs[0].0].value.data().to_vec();
        for &x in &xs[1..] {
            for (o, &v) in data.iter_mut().zip(self.nodes[x.0].value.data()) {
                if v > *o {
                    *o = v;
                }
            }
        }
        let t = Tensor::from_vec(shape, data)?;
        self.checked("max_elementwise_reduce", t, Op::MaxReduce { xs: xs.to_vec() })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId, NumError> {
        let s: R = self.nodes[x.0].value.data().iter().copied().sum();
        self.checked("sum", Tensor::scalar(s), Op::Sum { x })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId, NumError> {
        let n = self.nodes[x.0].value.numel();
        if n == 0 {
            return Err(NumError::Invalid {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let s: R = self.nodes[x.0].value.data().iter().copied().sum();
        let m = s / R::from_f64c(n as f64);
        self.checked("mean", Tensor::scalar(m), Op::Mean { x })
    }

    /// Element-wise binary cross-entropy against constant labels, with
    /// probabilities clamped to `[1e-7, 1-1e-7]` before the logs.
    pub fn bce(&mut self, p: TensorId, labels: &[R]) -> Result<TensorId, NumError> {
        let shape = self.shape(p).to_vec();
        if shape.len() != 1 || shape[0] != labels.len() {
            return Err(NumError::ShapeMismatch {
                op: "bce",
                lhs: shape,
                rhs: vec![labels.len()],
            });
        }
        let lo = R::from_f64c(PROB_CLAMP);
        let hi = R::one() - lo;
        let data: Vec<R> = self.nodes[p.0]
            .value
            .data()
            .iter()
            .zip(labels)
            .map(|(&pv, &y)| {
                let pc = pv.max(lo).min(hi);
                -(y * pc.ln() + (R::one() - y) * (R::one() - pc).ln())
            })
            .collect();
        let t = Tensor::vector(data);
        self.checked(
            "bce",
            t,
            Op::Bce {
                p,
                labels: labels.to_vec(),
            },
        )
    }

    /// Dot product of two equal-length vectors (composite: mul + sum).
    pub fn dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumError> {
        let m = self.mul(a, b)?;
        self.sum(m)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// registered parameter; parameters the loss never touched get
    /// zero gradients. The tape is consumed.
    pub fn backward(&mut self, loss: TensorId) -> Result<GradMap<R>, NumError> {
        if self.consumed {
            return Err(NumError::TapeConsumed);
        }
        self.consumed = true;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NumError::LossNotScalar(self.shape(loss).to_vec()));
        }

        let mut adj: Vec<Option<Vec<R>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![R::one()]);

        for i in (0..self.nodes.len()).rev() {
            let Some(dout) = adj[i].take() else { continue };
            // Re-attach for potential later readers (params read at the end).
            let dout_ref = &dout;
            match &self.nodes[i].op {
                Op::Leaf => {
                    adj[i] = Some(dout);
                    continue;
                }
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let sa = self.shape(a).to_vec();
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    let (m, k) = (sa[0], sa[1]);
                    if self.shape(b).len() == 1 {
                        let mut da = vec![R::zero(); m * k];
                        let mut db = vec![R::zero(); k];
                        for r in 0..m {
                            let g = dout_ref[r];
                            for c in 0..k {
                                da[r * k + c] = da[r * k + c] + g * bv[c];
                                db[c] = db[c] + g * av[r * k + c];
                            }
                        }
                        accumulate(&mut adj, a, da);
                        accumulate(&mut adj, b, db);
                    } else {
                        let n = self.shape(b)[1];
                        let mut da = vec![R::zero(); m * k];
                        let mut db = vec![R::zero(); k * n];
                        for r in 0..m {
                            for c in 0..n {
                                let g = dout_ref[r * n + c];
                                for p in 0..k {
                                    da[r * k + p] = da[r * k + p] + g * bv[p * n + c];
                                    db[p * n + c] = db[p * n + c] + g * av[r * k + p];
                                }
                            }
                        }
                        accumulate(&mut adj, a, da);
                        accumulate(&mut adj, b, db);
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut adj, a, dout.clone());
                    accumulate(&mut adj, b, dout);
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let da: Vec<R> = dout_ref
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    let db: Vec<R> = dout_ref
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    accumulate(&mut adj, a, da);
                    accumulate(&mut adj, b, db);
                }
                Op::Affine { x, mul, .. } => {
                    let (x, mul) = (*x, *mul);
                    let dx = dout_ref.iter().map(|&g| g * mul).collect();
                    accumulate(&mut adj, x, dx);
                }
                Op::Concat { xs } => {
                    let xs = xs.clone();
                    let mut off = 0;
                    for x in xs {
                        let n = self.nodes[x.0].value.numel();
                        accumulate(&mut adj, x, dout_ref[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let (x, start) = (*x, *start);
                    let mut dx = vec![R::zero(); self.nodes[x.0].value.numel()];
                    dx[start..start + dout_ref.len()].copy_from_slice(dout_ref);
                    accumulate(&mut adj, x, dx);
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    let dx: Vec<R> = dout_ref
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(&g, &s)| g * s * (R::one() - s))
                        .collect();
                    accumulate(&mut adj, x, dx);
                }
                Op::Tanh { x } => {
                    let x = *x;
                    let dx: Vec<R> = dout_ref
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(&g, &t)| g * (R::one() - t * t))
                        .collect();
                    accumulate(&mut adj, x, dx);
                }
                Op::MaxReduce { xs } => {
                    let xs = xs.clone();
                    let out = self.nodes[i].value.data().to_vec();
                    let n = out.len();
                    let mut taken = vec![false; n];
                    for x in xs {
                        let mut dx = vec![R::zero(); n];
                        for c in 0..n {
                            if !taken[c] && self.nodes[x.0].value.data()[c] == out[c] {
                                dx[c] = dout_ref[c];
                                taken[c] = true;
                            }
                        }
                        accumulate(&mut adj, x, dx);
                    }
                }
                Op::Sum { x } => {
                    let x = *x;
                    let g = dout_ref[0];
                    let dx = vec![g; self.nodes[x.0].value.numel()];
                    accumulate(&mut adj, x, dx);
                }
                Op::Mean { x } => {
                    let x = *x;
                    let n = self.nodes[x.0].value.numel();
                    let g = dout_ref[0] / R::from_f64c(n as f64);
                    accumulate(&mut adj, x, vec![g; n]);
                }
                Op::Bce { p, labels } => {
                    let p = *p;
                    let labels = labels.clone();
                    let lo = R::from_f64c(PROB_CLAMP);
                    let hi = R::one() - lo;
                    let dp: Vec<R> = dout_ref
                        .iter()
                        .zip(self.nodes[p.0].value.data())
                        .zip(&labels)
                        .map(|((&g, &pv), &y)| {
                            if pv < lo || pv > hi {
                                R::zero()
                            } else {
                                g * (pv - y) / (pv * (R::one() - pv))
                            }
                        })
                        .collect();
                    accumulate(&mut adj, p, dp);
                }
            }
        }

        let mut grads = GradMap::new();
        for (name, id) in &self.params {
            let shape = self.nodes[id.0].value.shape().to_vec();
            let g = match adj[id.0].take() {
                Some(v) => Tensor::from_vec(shape, v)?,
                None => Tensor::zeros(&shape),
            };
            if !g.is_finite() {
                return Err(NumError::NonFinite { op: "backward" });
            }
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }
}

fn accumulate<R: Real>(adj: &mut [Option<Vec<R>>], id: TensorId, delta: Vec<R>) {
    match &mut adj[id.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(&delta) {
                *e = *e + *d;
            }
        }
        slot => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::vector(data.to_vec())
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[0.0]));
        let s = t.sigmoid(x).unwrap();
        assert_eq!(t.value(s).data(), &[0.5]);
    }

    #[test]
    fn matmul_identity_passes_through() {
        let mut t = Tape::new();
        let i2 = t.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = t.leaf(v(&[3.0, 4.0]));
        let y = t.matmul(i2, x).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn max_reduce_is_elementwise() {
        let mut t = Tape::new();
        let a = t.leaf(v(&[1.0, 4.0]));
        let b = t.leaf(v(&[3.0, 2.0]));
        let m = t.max_reduce(&[a, b]).unwrap();
        assert_eq!(t.value(m).data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_op_and_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let x = t.leaf(v(&[1.0, 2.0]));
        let err = t.matmul(a, x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn backward_of_sum_of_squares() {
        // loss = sum(x*x) at x=[3] -> grad 6
        let mut t = Tape::new();
        let x = t.param("x", &v(&[3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g["x"].data(), &[6.0]);
    }

    #[test]
    fn backward_of_sigmoid_dot() {
        // loss = sigmoid(w . 1) at w=0 -> grad 0.25
        let mut t = Tape::new();
        let w = t.param("w", &v(&[0.0]));
        let one = t.leaf(v(&[1.0]));
        let d = t.dot(w, one).unwrap();
        let s = t.sigmoid(d).unwrap();
        let g = t.backward(s).unwrap();
        assert!((g["w"].data()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn untouched_params_get_zero_gradients() {
        let mut t = Tape::new();
        let x = t.param("x", &v(&[2.0]));
        let _unused = t.param("unused", &v(&[1.0, 1.0]));
        let loss = t.sum(x).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g["unused"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut t = Tape::new();
        let x = t.param("x", &v(&[1.0]));
        let loss = t.sum(x).unwrap();
        t.backward(loss).unwrap();
        assert!(matches!(t.backward(loss), Err(NumError::TapeConsumed)));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let x = t.param("x", &v(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(NumError::LossNotScalar(_))));
    }

    #[test]
    fn shared_param_accumulates_both_paths() {
        // loss = sum(x*x) + sum(x) -> grad 2x + 1
        let mut t = Tape::new();
        let x = t.param("x", &v(&[3.0]));
        let x_again = t.param("x", &v(&[999.0])); // dedup: same id, first value wins
        assert_eq!(x, x_again);
        let sq = t.mul(x, x).unwrap();
        let s1 = t.sum(sq).unwrap();
        let s2 = t.sum(x_again).unwrap();
        let loss = t.add(s1, s2).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g["x"].data(), &[7.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[1e308]));
        let y = t.leaf(v(&[1e308]));
        let prod = t.mul(x, y).unwrap_err();
        assert!(matches!(prod, NumError::NonFinite { .. }));
    }

    #[test]
    fn bce_matches_hand_computation() {
        let mut t = Tape::new();
        let p = t.leaf(v(&[0.5, 0.5, 0.9]));
        let l = t.bce(p, &[1.0, 0.0, 1.0]).unwrap();
        let got = t.value(l).data().to_vec();
        let ln2 = std::f64::consts::LN_2;
        assert!((got[0] - ln2).abs() < 1e-12);
        assert!((got[1] - ln2).abs() < 1e-12);
        assert!((got[2] - (-(0.9f64).ln())).abs() < 1e-12);
    }
}
