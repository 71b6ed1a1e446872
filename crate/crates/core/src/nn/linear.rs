use crate::tensor::{gemm, BackwardCtx, BackwardRule, Float, Result, Tape, TensorError, Transpose, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
}

impl LinearSpec {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            bias: true,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + if self.bias { self.out_features } else { 0 }
    }

    pub fn weight_shape(&self) -> [usize; 2] {
        [self.out_features, self.in_features]
    }

    pub fn macs(&self) -> u64 {
        (self.in_features * self.out_features) as u64
    }
}

struct LinearRule {
    x: Var,
    weight: Var,
    bias: Option<Var>,
    n: usize,
    fin: usize,
    fout: usize,
}

impl<F: Float> BackwardRule<F> for LinearRule {
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.weight];
        v.extend(self.bias);
        v
    }

    fn backward(
        &self,
        ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let (n, fin, fout) = (self.n, self.fin, self.fout);
        let dx = needs[0].then(|| {
            let mut dx = vec![F::zero(); n * fin];
            let w = ctx.value(self.weight).data();
            gemm(Transpose::No, Transpose::No, n, fin, fout, F::one(), grad_out, w, F::zero(), &mut dx);
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![F::zero(); fout * fin];
            let x = ctx.value(self.x).data();
            gemm(Transpose::Yes, Transpose::No, fout, fin, n, F::one(), grad_out, x, F::zero(), &mut dw);
            dw
        });
        let mut grads = vec![dx, dw];
        if self.bias.is_some() {
            grads.push(needs[2].then(|| {
                let mut db = vec![F::zero(); fout];
                for row in grad_out.chunks(fout) {
                    db.iter_mut().zip(row).for_each(|(d, &g)| *d = *d + g);
                }
                db
            }));
        }
        Ok(grads)
    }
}

impl<F: Float> Tape<F> {
    /// `y = x·Wᵀ + b` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, spec: &LinearSpec, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x)?.to_vec();
        if xs.len() != 2 || xs[1] != spec.in_features {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: xs,
                rhs: spec.weight_shape().to_vec(),
            });
        }
        if self.shape(weight)? != spec.weight_shape() {
            return Err(TensorError::ShapeMismatch {
                op: "linear weight",
                lhs: self.shape(weight)?.to_vec(),
                rhs: spec.weight_shape().to_vec(),
            });
        }
        if bias.is_some() != spec.bias {
            return Err(TensorError::InvalidArgument {
                op: "linear",
                msg: "bias presence does not match spec".into(),
            });
        }
        let (n, fin, fout) = (xs[0], spec.in_features, spec.out_features);
        let mut out = vec![F::zero(); n * fout];
        gemm(
            Transpose::No,
            Transpose::Yes,
            n,
            fout,
            fin,
            F::one(),
            self.value(x)?.data(),
            self.value(weight)?.data(),
            F::zero(),
            &mut out,
        );
        if let Some(b) = bias {
            let bd = self.value(b)?.data();
            if bd.len() != fout {
                return Err(TensorError::ShapeMismatch {
                    op: "linear bias",
                    lhs: self.shape(b)?.to_vec(),
                    rhs: vec![fout],
                });
            }
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bd).for_each(|(o, &b)| *o = *o + b);
            }
        }
        self.record(
            "linear",
            vec![n, fout],
            out,
            LinearRule {
                x,
                weight,
                bias,
                n,
                fin,
                fout,
            },
        )
    }
}
