use crate::tensor::{BackwardCtx, BackwardRule, Float, Result, Tape, TensorError, Var};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Float>(logits: &[F], classes: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: F = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

/// `−log softmax(row)[target]` for each row, computed as `logsumexp(row) − row[target]`.
pub fn cross_entropy_per_sample<F: Float>(
    logits: &[F],
    classes: usize,
    targets: &[usize],
) -> Result<Vec<F>> {
    check_targets(logits.len(), classes, targets)?;
    Ok(logits
        .chunks(classes)
        .zip(targets)
        .map(|(row, &t)| {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            lse - row[t]
        })
        .collect())
}

fn check_targets(len: usize, classes: usize, targets: &[usize]) -> Result<()> {
    if classes == 0 || len != classes * targets.len() {
        return Err(TensorError::InvalidArgument {
            op: "cross_entropy",
            msg: format!("{len} logits do not match {} targets × {classes} classes", targets.len()),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(TensorError::InvalidArgument {
            op: "cross_entropy",
            msg: format!("target {bad} out of range for {classes} classes"),
        });
    }
    Ok(())
}

struct CrossEntropyRule<F> {
    logits: Var,
    probs: Vec<F>,
    targets: Vec<usize>,
    classes: usize,
}

impl<F: Float> BackwardRule<F> for CrossEntropyRule<F> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.logits]
    }

    fn backward(
        &self,
        _ctx: &BackwardCtx<'_, F>,
        grad_out: &[F],
        _needs: &[bool],
    ) -> Result<Vec<Option<Vec<F>>>> {
        let n = F::from_usize(self.targets.len()).unwrap();
        let scale = grad_out[0] / n;
        let mut g = self.probs.clone();
        for (row, &t) in g.chunks_mut(self.classes).zip(&self.targets) {
            row[t] = row[t] - F::one();
            row.iter_mut().for_each(|v| *v = *v * scale);
        }
        Ok(vec![Some(g)])
    }
}

impl<F: Float> Tape<F> {
    /// Mean cross-entropy of `[N, K]` logits against class ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits)?.to_vec();
        if shape.len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "cross_entropy",
                msg: format!("expected [N, K] logits, got {shape:?}"),
            });
        }
        let classes = shape[1];
        let data = self.value(logits)?.data();
        let losses = cross_entropy_per_sample(data, classes, targets)?;
        let mean = losses.iter().copied().sum::<F>() / F::from_usize(losses.len()).unwrap();
        let probs = softmax_rows(data, classes);
        self.record(
            "cross_entropy",
            Vec::new(),
            vec![mean],
            CrossEntropyRule {
                logits,
                probs,
                targets: targets.to_vec(),
                classes,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn uniform_logits_give_ln3() {
        let l = cross_entropy_per_sample(&[0.0f64, 0.0, 0.0], 3, &[1]).unwrap();
        assert!((l[0] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec([1, 3], vec![1000.0, -1000.0, -1000.0]).unwrap());
        let loss = tape.cross_entropy(x, &[0]).unwrap();
        let v = tape.value(loss).unwrap().item().unwrap();
        assert!(v.abs() < 1e-12);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn out_of_range_target() {
        assert!(cross_entropy_per_sample(&[0.0f32; 3], 3, &[3]).is_err());
        assert!(cross_entropy_per_sample(&[0.0f32; 3], 3, &[0, 1]).is_err());
    }
}
