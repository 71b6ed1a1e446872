use super::FeatureError;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters, `[mel_bins, n_fft/2 + 1]` row-major, each with unit area in Hz
/// (Slaney-style normalization `2 / (f_right − f_left)`).
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub mel_bins: usize,
    pub n_freqs: usize,
    pub weights: Vec<f64>,
    /// Centre frequencies in Hz.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, sample_rate: u32, mel_bins: usize, fmin: f64, fmax: f64) -> Result<Self, FeatureError> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) || mel_bins == 0 || n_fft < 2 {
            return Err(FeatureError::InvalidConfig(format!(
                "mel filterbank needs 0 ≤ fmin < fmax ≤ {nyquist}, got {fmin}..{fmax} with {mel_bins} bins"
            )));
        }
        let n_freqs = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..mel_bins + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel_bins + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let mut weights = vec![0.0; mel_bins * n_freqs];
        for m in 0..mel_bins {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            let row = &mut weights[m * n_freqs..(m + 1) * n_freqs];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let up = (f - left) / (center - left);
                let down = (right - f) / (right - center);
                *w = up.min(down).max(0.0) * norm;
            }
            if row.iter().all(|&w| w == 0.0) {
                return Err(FeatureError::EmptyFilter { index: m });
            }
        }
        Ok(Self {
            mel_bins,
            n_freqs,
            weights,
            centers: edges[1..=mel_bins].to_vec(),
        })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_freqs..(m + 1) * self.n_freqs]
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.row(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> MelFilterbank {
        MelFilterbank::new(2048, 48_000, 64, 0.0, 24_000.0).unwrap()
    }

    #[test]
    fn mel_scale_round_trip() {
        for f in [0.0, 300.0, 1000.0, 24_000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn interior_bins_are_covered() {
        let b = bank();
        for k in 1..b.n_freqs - 1 {
            let col: f64 = (0..64).map(|m| b.row(m)[k]).sum();
            assert!(col > 0.0, "bin {k} uncovered");
        }
    }

    #[test]
    fn peaks_increase() {
        let b = bank();
        let peaks: Vec<usize> = (0..64)
            .map(|m| {
                let r = b.row(m);
                (0..r.len()).max_by(|&i, &j| r[i].total_cmp(&r[j])).unwrap()
            })
            .collect();
        assert!(peaks.windows(2).all(|w| w[0] <= w[1]));
        assert!(b.centers.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn flat_spectrum_gives_row_sums() {
        let b = bank();
        let mut out = vec![0.0; 64];
        b.apply(&vec![1.0; b.n_freqs], &mut out);
        for (m, &o) in out.iter().enumerate() {
            let mut s = 0.0;
            for k in 0..b.n_freqs {
                s += b.weights[m * b.n_freqs + k];
            }
            assert!((o - s).abs() < 1e-15);
        }
    }

    #[test]
    fn too_many_bins_leave_an_empty_filter() {
        assert!(matches!(
            MelFilterbank::new(64, 48_000, 64, 0.0, 24_000.0),
            Err(FeatureError::EmptyFilter { .. })
        ));
        assert!(MelFilterbank::new(2048, 48_000, 64, 100.0, 30_000.0).is_err());
    }
}
