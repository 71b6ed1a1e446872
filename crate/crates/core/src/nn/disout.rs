//! Disout: structured feature-map perturbation with a linearly scheduled rate.
//!
//! In training, block seeds are drawn independently for every (sample, channel) map at a
//! rate solved so that the expected fraction of covered elements equals the scheduled
//! probability. Covered elements are shifted by `alpha · ε · range` where `ε ~ U[-1, 1]`
//! and `range` is the max − min of that channel's map. The shift is treated as constant
//! noise, so the gradient passes straight through.

use rand::Rng;

use crate::tensor::{Float, PassRule, Result, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisoutSpec {
    pub dist_prob_start: f64,
    pub dist_prob_end: f64,
    pub block_size: (usize, usize),
    pub alpha: f64,
    pub schedule_steps: u64,
}

impl Default for DisoutSpec {
    fn default() -> Self {
        Self {
            dist_prob_start: 0.0,
            dist_prob_end: 0.3,
            block_size: (2, 2),
            alpha: 1.0,
            schedule_steps: 1,
        }
    }
}

impl DisoutSpec {
    /// A constant-rate spec, mostly useful in tests.
    pub fn fixed(p: f64, block: usize) -> Self {
        Self {
            dist_prob_start: p,
            dist_prob_end: p,
            block_size: (block, block),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s, e) = (self.dist_prob_start, self.dist_prob_end);
        let ok = (0.0..=1.0).contains(&s)
            && (0.0..=1.0).contains(&e)
            && s <= e
            && self.block_size.0 > 0
            && self.block_size.1 > 0
            && self.alpha.is_finite()
            && self.schedule_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidArgument {
                op: "disout",
                msg: format!("invalid spec {self:?}"),
            })
        }
    }

    /// Linear ramp `start + (end − start) · min(step / schedule_steps, 1)`.
    pub fn probability(&self, step: u64) -> f64 {
        let t = (step as f64 / self.schedule_steps as f64).min(1.0);
        self.dist_prob_start + (self.dist_prob_end - self.dist_prob_start) * t
    }
}

/// Coverage multiplicity histogram of a map: `(k, cells)` where `k` is how many valid
/// block seeds cover a cell.
fn coverage(h: usize, w: usize, bh: usize, bw: usize) -> Vec<(usize, usize)> {
    let per_axis = |n: usize, b: usize| -> Vec<usize> {
        let seeds = n - b + 1;
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(b - 1);
                let hi = i.min(seeds - 1);
                hi + 1 - lo
            })
            .collect()
    };
    let rows = per_axis(h, bh);
    let cols = per_axis(w, bw);
    let mut hist = std::collections::BTreeMap::new();
    for &r in &rows {
        for &c in &cols {
            *hist.entry(r * c).or_insert(0usize) += 1;
        }
    }
    hist.into_iter().collect()
}

/// Seed rate γ such that `mean over cells of 1 − (1 − γ)^k = p`, found by bisection.
pub fn seed_rate(p: f64, h: usize, w: usize, block: (usize, usize)) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let hist = coverage(h, w, block.0, block.1);
    let total = (h * w) as f64;
    let expected = |g: f64| -> f64 {
        hist.iter()
            .map(|&(k, cells)| cells as f64 * (1.0 - (1.0 - g).powi(k as i32)))
            .sum::<f64>()
            / total
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Samples the perturbation for an NCHW map. Returns the additive noise (zero outside
/// selected blocks) and the number of perturbed elements.
pub fn sample_perturbation<F: Float, R: Rng + ?Sized>(
    spec: &DisoutSpec,
    p: f64,
    shape: &[usize],
    x: &[F],
    rng: &mut R,
) -> Result<(Vec<F>, usize)> {
    let &[n, c, h, w] = shape else {
        return Err(TensorError::InvalidArgument {
            op: "disout",
            msg: format!("expected NCHW input, got {shape:?}"),
        });
    };
    let (bh, bw) = spec.block_size;
    if bh > h || bw > w {
        return Err(TensorError::InvalidArgument {
            op: "disout",
            msg: format!("block {bh}×{bw} larger than {h}×{w} feature map"),
        });
    }
    let gamma = seed_rate(p, h, w, spec.block_size);
    let mut noise = vec![F::zero(); x.len()];
    let mut mask = vec![false; h * w];
    let mut perturbed = 0;
    for plane in 0..n * c {
        let xs = &x[plane * h * w..(plane + 1) * h * w];
        mask.fill(false);
        for sy in 0..=h - bh {
            for sx in 0..=w - bw {
                if rng.random::<f64>() < gamma {
                    for y in sy..sy + bh {
                        mask[y * w + sx..y * w + sx + bw].fill(true);
                    }
                }
            }
        }
        let (lo, hi) = xs
            .iter()
            .fold((F::infinity(), F::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = (hi - lo).to_f64_lossy();
        let ns = &mut noise[plane * h * w..(plane + 1) * h * w];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                let eps: f64 = rng.random_range(-1.0..=1.0);
                ns[i] = F::from_f64_lossy(-spec.alpha * eps * range);
                perturbed += 1;
            }
        }
    }
    Ok((noise, perturbed))
}

impl<F: Float> Tape<F> {
    /// Disout layer. Eval mode and zero probability return `x` itself.
    pub fn disout<R: Rng + ?Sized>(
        &mut self,
        spec: &DisoutSpec,
        x: Var,
        train: bool,
        step: u64,
        rng: &mut R,
    ) -> Result<Var> {
        spec.validate()?;
        if step > spec.schedule_steps {
            return Err(TensorError::InvalidArgument {
                op: "disout",
                msg: format!("step {step} beyond schedule of {} steps", spec.schedule_steps),
            });
        }
        let p = spec.probability(step);
        if !train || p <= 0.0 {
            // still validates geometry
            let shape = self.shape(x)?;
            if shape.len() != 4 || spec.block_size.0 > shape[2] || spec.block_size.1 > shape[3] {
                return Err(TensorError::InvalidArgument {
                    op: "disout",
                    msg: format!("block {:?} does not fit {shape:?}", spec.block_size),
                });
            }
            return Ok(x);
        }
        let xv = self.value(x)?;
        let shape = xv.shape().to_vec();
        let (noise, _) = sample_perturbation(spec, p, &shape, xv.data(), rng)?;
        let out = xv.data().iter().zip(&noise).map(|(&a, &b)| a + b).collect();
        self.record("disout", shape, out, PassRule { a: x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_is_linear_and_clamped() {
        let spec = DisoutSpec {
            schedule_steps: 10,
            ..DisoutSpec::default()
        };
        assert_eq!(spec.probability(0), 0.0);
        assert!((spec.probability(5) - 0.15).abs() < 1e-15);
        assert!((spec.probability(10) - 0.3).abs() < 1e-15);
        assert!((spec.probability(20) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs() {
        assert!(DisoutSpec { dist_prob_start: 0.5, dist_prob_end: 0.2, ..DisoutSpec::default() }
            .validate()
            .is_err());
        assert!(DisoutSpec { schedule_steps: 0, ..DisoutSpec::default() }.validate().is_err());
    }

    #[test]
    fn seed_rate_without_overlap_is_p_over_area() {
        // 1×1 blocks never overlap: γ = p.
        assert!((seed_rate(0.25, 4, 4, (1, 1)) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn coverage_counts_cells() {
        let hist = coverage(3, 2, 2, 2);
        assert_eq!(hist.iter().map(|&(_, c)| c).sum::<usize>(), 6);
        // rows covered by 1,2,1 seeds; columns by 1,1
        assert_eq!(hist, vec![(1, 4), (2, 2)]);
    }

    #[test]
    fn block_larger_than_map() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(crate::tensor::Tensor::zeros([1, 1, 1, 4]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = DisoutSpec::fixed(0.5, 2);
        assert!(tape.disout(&spec, x, true, 0, &mut rng).is_err());
    }
}
