use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{ensure_finite, gemm, Float, Result, Tensor, TensorError, Transpose};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Backward rule registered by an operation when it is recorded.
pub(crate) trait BackwardRule<F: Float>: Send {
    fn inputs(&self) -> Vec<Var>;

    /// Gradients with respect to each input, in the order of [`BackwardRule::inputs`].
    /// Inputs whose `needs` flag is false may be answered with `None`.
    fn backward(
        &self,
        ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>>;
}

pub(crate) struct BackwardCtx<'a, F: Float> {
    nodes: &'a [Node<F>],
    output: usize,
}

impl<F: Float> BackwardCtx<'_, F> {
    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.index].value
    }

    pub fn output(&self) -> &Tensor<F> {
        &self.nodes[self.output].value
    }
}

struct Node<F: Float> {
    value: Tensor<F>,
    rule: Option<Box<dyn BackwardRule<F>>>,
}

/// Gradients of leaf tensors produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    tape: u64,
    grads: HashMap<usize, Vec<F>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<&[F]> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(&var.index).map(Vec::as_slice)
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<F>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.remove(&var.index)
    }
}

/// Ordered record of operations for reverse-mode differentiation.
///
/// Values are owned by the tape; operations are recorded only when at least one input
/// requires a gradient. A backward pass consumes the recorded rules.
pub struct Tape<F: Float = f32> {
    id: u64,
    nodes: Vec<Node<F>>,
    consumed: bool,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of operations still holding a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.rule.is_some()).count()
    }

    /// Places an input tensor on the tape; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> Var {
        self.push(tensor, None)
    }

    pub fn param(&mut self, tensor: Tensor<F>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<F>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, var: Var) -> Result<&Tensor<F>> {
        self.check(var)?;
        Ok(&self.nodes[var.index].value)
    }

    pub fn shape(&self, var: Var) -> Result<&[usize]> {
        Ok(self.value(var)?.shape())
    }

    pub fn requires_grad(&self, var: Var) -> Result<bool> {
        Ok(self.value(var)?.requires_grad())
    }

    fn push(&mut self, value: Tensor<F>, rule: Option<Box<dyn BackwardRule<F>>>) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, rule });
        Var {
            tape: self.id,
            index,
        }
    }

    pub(crate) fn check(&self, var: Var) -> Result<()> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            Err(TensorError::ForeignVar)
        } else {
            Ok(())
        }
    }

    /// Records the result of an operation. The rule is kept only when an input needs a
    /// gradient; the value is rejected if it holds NaN or infinity.
    pub(crate) fn record<R: BackwardRule<F> + 'static>(
        &mut self,
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<F>,
        rule: R,
    ) -> Result<Var> {
        ensure_finite(&data, op)?;
        let inputs = rule.inputs();
        for &v in &inputs {
            self.check(v)?;
        }
        let needs = inputs
            .iter()
            .any(|v| self.nodes[v.index].value.requires_grad());
        let value = Tensor::from_parts(shape, data).with_requires_grad(needs);
        let rule: Option<Box<dyn BackwardRule<F>>> = if needs {
            Some(Box::new(rule))
        } else {
            None
        };
        Ok(self.push(value, rule))
    }

    /// Reverse sweep from a scalar loss. Leaves that require gradients get their
    /// `grad` populated; all recorded rules are released afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        self.check(loss)?;
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_value = &self.nodes[loss.index].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::NotScalar(loss_value.shape().to_vec()));
        }

        let mut pending: Vec<Option<Vec<F>>> = (0..=loss.index).map(|_| None).collect();
        pending[loss.index] = Some(vec![F::one()]);
        let mut leaves = HashMap::new();

        for index in (0..=loss.index).rev() {
            let Some(grad) = pending[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            match &node.rule {
                Some(rule) => {
                    let inputs = rule.inputs();
                    let needs: Vec<bool> = inputs
                        .iter()
                        .map(|v| self.nodes[v.index].value.requires_grad())
                        .collect();
                    let ctx = BackwardCtx {
                        nodes: &self.nodes,
                        output: index,
                    };
                    let input_grads = rule.backward(&ctx, &grad, &needs)?;
                    for ((var, g), need) in inputs.into_iter().zip(input_grads).zip(needs) {
                        let Some(g) = g else { continue };
                        if !need {
                            continue;
                        }
                        ensure_finite(&g, "backward")?;
                        match &mut pending[var.index] {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
                None if node.value.requires_grad() => {
                    leaves.insert(index, grad);
                }
                None => {}
            }
        }

        for (&index, grad) in &leaves {
            self.nodes[index].value.set_grad(grad.clone())?;
        }
        for node in &mut self.nodes {
            node.rule = None;
        }
        self.consumed = true;
        Ok(Gradients {
            tape: self.id,
            grads: leaves,
        })
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a)?;
        let bv = self.value(b)?;
        let bcast = Broadcast::resolve(kind.name(), av.shape(), bv.shape())?;
        let (big, small) = match bcast.small {
            Side::Lhs => (bv, av),
            _ => (av, bv),
        };
        let sl = small.numel();
        let data: Vec<F> = big
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = small.data()[i % sl];
                match (bcast.small, kind) {
                    (Side::Lhs, BinaryKind::Sub) => y - x,
                    (_, BinaryKind::Add) => x + y,
                    (_, BinaryKind::Sub) => x - y,
                    (_, BinaryKind::Mul) => x * y,
                }
            })
            .collect();
        let shape = big.shape().to_vec();
        self.record(
            kind.name(),
            shape,
            data,
            BinaryRule { kind, a, b },
        )
    }

    /// Elementwise sum. Shapes must match, or the shorter shape must equal the trailing
    /// dimensions of the longer one, in which case it is repeated along the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let av = self.value(a)?;
        if kind == UnaryKind::Log {
            if let Some(&bad) = av.data().iter().find(|&&v| v <= F::zero()) {
                return Err(TensorError::NonPositiveLog(bad.to_f64_lossy()));
            }
        }
        let data = av
            .data()
            .iter()
            .map(|&x| match kind {
                UnaryKind::Neg => -x,
                UnaryKind::Relu => x.max(F::zero()),
                UnaryKind::Log => x.ln(),
                UnaryKind::Exp => x.exp(),
            })
            .collect();
        let shape = av.shape().to_vec();
        self.record(kind.name(), shape, data, UnaryRule { kind, a })
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a)?.data().iter().copied().sum();
        self.record("sum", Vec::new(), vec![total], ReduceRule { a, mean: false })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a)?;
        let n = F::from_usize(av.numel()).unwrap();
        let total: F = av.data().iter().copied().sum();
        self.record("mean", Vec::new(), vec![total / n], ReduceRule { a, mean: true })
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let av = self.value(a)?;
        let n: usize = shape.iter().product();
        if n != av.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: av.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = av.data().to_vec();
        self.record("reshape", shape, data, PassRule { a })
    }

    /// `[M, K] × [K, N] → [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a)?;
        let bv = self.value(b)?;
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(
            Transpose::No,
            Transpose::No,
            m,
            n,
            k,
            F::one(),
            av.data(),
            bv.data(),
            F::zero(),
            &mut out,
        );
        self.record("matmul", vec![m, n], out, MatMulRule { a, b, m, k, n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Equal,
    Lhs,
    Rhs,
}

struct Broadcast {
    small: Side,
}

impl Broadcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let small = if a == b {
            Side::Equal
        } else if b.len() < a.len() && a.ends_with(b) {
            Side::Rhs
        } else if a.len() < b.len() && b.ends_with(a) {
            Side::Lhs
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
        Ok(Self { small })
    }
}

/// Sums a gradient over the leading axes it was broadcast along.
fn reduce_to<F: Float>(grad: &[F], len: usize) -> Vec<F> {
    if grad.len() == len {
        return grad.to_vec();
    }
    let mut out = vec![F::zero(); len];
    for chunk in grad.chunks(len) {
        out.iter_mut().zip(chunk).for_each(|(o, &g)| *o = *o + g);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }
}

struct BinaryRule {
    kind: BinaryKind,
    a: Var,
    b: Var,
}

impl<F: Float> BackwardRule<F> for BinaryRule {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(
        &self,
        ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let av = ctx.value(self.a);
        let bv = ctx.value(self.b);
        let (la, lb) = (av.numel(), bv.numel());
        // Full-size gradient w.r.t. each operand before reducing broadcast axes.
        let full = |partner: &Tensor<F>, negate: bool| -> Vec<F> {
            let pl = partner.numel();
            grad_out
                .iter()
                .enumerate()
                .map(|(i, &g)| match self.kind {
                    BinaryKind::Mul => g * partner.data()[i % pl],
                    _ if negate => -g,
                    _ => g,
                })
                .collect()
        };
        let ga = needs[0].then(|| reduce_to(&full(bv, false), la));
        let gb = needs[1].then(|| reduce_to(&full(av, self.kind == BinaryKind::Sub), lb));
        Ok(vec![ga, gb])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Relu,
    Log,
    Exp,
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Neg => "neg",
            UnaryKind::Relu => "relu",
            UnaryKind::Log => "log",
            UnaryKind::Exp => "exp",
        }
    }
}

struct UnaryRule {
    kind: UnaryKind,
    a: Var,
}

impl<F: Float> BackwardRule<F> for UnaryRule {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }

    fn backward(
        &self,
        ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let x = ctx.value(self.a).data();
        let y = ctx.output().data();
        let g = grad_out
            .iter()
            .enumerate()
            .map(|(i, &g)| match self.kind {
                UnaryKind::Neg => -g,
                // subgradient 0 at the kink
                UnaryKind::Relu => {
                    if x[i] > F::zero() {
                        g
                    } else {
                        F::zero()
                    }
                }
                UnaryKind::Log => g / x[i],
                UnaryKind::Exp => g * y[i],
            })
            .collect();
        Ok(vec![Some(g)])
    }
}

struct ReduceRule {
    a: Var,
    mean: bool,
}

impl<F: Float> BackwardRule<F> for ReduceRule {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }

    fn backward(
        &self,
        ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let n = ctx.value(self.a).numel();
        let mut g = grad_out[0];
        if self.mean {
            g = g / F::from_usize(n).unwrap();
        }
        Ok(vec![Some(vec![g; n])])
    }
}

/// Gradient passes through unchanged (reshape, additive constant noise).
pub(crate) struct PassRule {
    pub a: Var,
}

impl<F: Float> BackwardRule<F> for PassRule {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }

    fn backward(
        &self,
        _ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        Ok(vec![Some(grad_out.to_vec())])
    }
}

struct MatMulRule {
    a: Var,
    b: Var,
    m: usize,
    k: usize,
    n: usize,
}

impl<F: Float> BackwardRule<F> for MatMulRule {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(
        &self,
        ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let ga = needs[0].then(|| {
            let mut g = vec![F::zero(); m * k];
            let b = ctx.value(self.b).data();
            gemm(Transpose::No, Transpose::Yes, m, k, n, F::one(), grad_out, b, F::zero(), &mut g);
            g
        });
        let gb = needs[1].then(|| {
            let mut g = vec![F::zero(); k * n];
            let a = ctx.value(self.a).data();
            gemm(Transpose::Yes, Transpose::No, k, n, m, F::one(), a, grad_out, F::zero(), &mut g);
            g
        });
        Ok(vec![ga, gb])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(tape.recorded_ops(), 0);
    }

    #[test]
    fn add_forward() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_gradient_matches_central_difference() {
        let f = |a: f64| a * 3.0;
        let h = 1e-6;
        let numeric = (f(2.0 + h) - f(2.0 - h)) / (2.0 * h);

        let mut tape = Tape::new();
        let a = tape.param(t(&[1], &[2.0]));
        let b = tape.constant(t(&[1], &[3.0]));
        let y = tape.mul(a, b).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!((grads.get(a).unwrap()[0] - numeric).abs() < 1e-7);
    }

    #[test]
    fn broadcast_rules() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.param(t(&[3], &[10.0, 20.0, 30.0]));
        let c = tape.sub(b, a).unwrap();
        assert_eq!(
            tape.value(c).unwrap().data(),
            &[9.0, 18.0, 27.0, 6.0, 15.0, 24.0]
        );
        let loss = tape.sum(c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[-1.0; 6]);
        assert_eq!(grads.get(b).unwrap(), &[2.0; 3]);

        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 3], &[0.0; 6]));
        let b = tape.constant(t(&[2], &[0.0; 2]));
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(tape.log(a), Err(TensorError::NonPositiveLog(_))));
    }

    #[test]
    fn exp_overflow_is_a_hard_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1], &[1e4]));
        assert!(matches!(tape.exp(a), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn matmul_identity_and_shape() {
        let mut tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(p).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(Tensor::zeros([1, 256]).unwrap());
        let w = tape.constant(Tensor::zeros([256, 3]).unwrap());
        let y = tape.matmul(a, w).unwrap();
        assert_eq!(tape.shape(y).unwrap(), &[1, 3]);
        assert!(tape.matmul(a, a).is_err());
    }

    #[test]
    fn matmul_gradient_is_row_sums_of_rhs() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 1.0, -1.0]));
        let b = tape.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = tape.matmul(a, b).unwrap();
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[3.0, 7.0, 11.0, 3.0, 7.0, 11.0]);
    }

    #[test]
    fn sum_and_relu_gradients() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let loss = tape.sum(w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[1.0, 1.0, 1.0]);
        assert_eq!(tape.value(w).unwrap().grad().unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let w = tape.param(t(&[2], &[-1.0, 2.0]));
        let r = tape.relu(w).unwrap();
        let loss = tape.sum(r).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(TensorError::NotScalar(_))));

        let mut other = Tape::<f64>::new();
        let foreign = other.param(t(&[1], &[1.0]));
        assert!(matches!(tape.backward(foreign), Err(TensorError::ForeignVar)));

        let loss = tape.sum(w).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.recorded_ops(), 0);
        assert!(matches!(tape.backward(loss), Err(TensorError::TapeConsumed)));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }
}
