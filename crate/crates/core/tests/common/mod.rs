//! Independent oracles shared by the integration tests. Nothing here calls into the
//! convolution or gradient code paths it is used to check.
#![allow(dead_code)]

use ddcnn_core::nn::Conv2dSpec;
use ddcnn_core::tensor::{Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Direct convolution: one multiply–add per (n, o, y, x, c, ky, kx) term.
pub fn naive_conv2d(
    spec: &Conv2dSpec,
    x: &[f64],
    in_shape: [usize; 4],
    w: &[f64],
    b: Option<&[f64]>,
) -> (Vec<f64>, [usize; 4]) {
    let [n, cin, h, wd] = in_shape;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let ho = (h + 2 * ph - kh) / sh + 1;
    let wo = (wd + 2 * pw - kw) / sw + 1;
    let cout = spec.out_channels;
    let cg = cin / spec.groups;
    let og = cout / spec.groups;
    let mut out = vec![0.0; n * cout * ho * wo];
    for s in 0..n {
        for o in 0..cout {
            let g = o / og;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for c in 0..cg {
                        let ci = g * cg + c;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((s * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w[((o * cg + c) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((s * cout + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, [n, cout, ho, wo])
}

/// Worst relative error between analytic and central-difference gradients.
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a small absolute floor in the denominator so that coordinates
/// whose true gradient is ~0 are compared on an absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks `samples` random coordinates of every input (or all coordinates when fewer)
/// against `(f(x + h) − f(x − h)) / 2h`.
pub fn check_gradients<G>(
    inputs: &[Tensor<f64>],
    samples: usize,
    h: f64,
    seed: u64,
    graph: G,
) -> Result<GradCheck, TensorError>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |tensors: &[Tensor<f64>], grad: bool| -> Result<(f64, Vec<Vec<f64>>), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(grad)))
            .collect();
        let loss = graph(&mut tape, &vars)?;
        let value = tape.value(loss)?.item().unwrap();
        if !grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(loss)?;
        let g = vars
            .iter()
            .zip(tensors)
            .map(|(&v, t)| grads.get(v).map_or(vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        Ok((value, g))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if t.numel() <= samples {
            (0..t.numel()).collect()
        } else {
            (0..samples).map(|_| r.random_range(0..t.numel())).collect()
        };
        for j in coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus, false)?.0 - eval(&minus, false)?.0) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i][j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        checked,
    })
}

/// `sum(y ⊙ r)` for a fixed random `r`, so no gradient vanishes by symmetry.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.shape(y)?.to_vec();
    let weights = random_tensor(&shape, &mut rng(seed));
    let r = tape.constant(weights);
    let prod = tape.mul(y, r)?;
    tape.sum(prod)
}

/// Random 640×64 maps with balanced labels, for tests that only need geometry.
pub fn random_samples(n_per_class: usize, seed: u64) -> Vec<ddcnn_core::datasets::Sample> {
    use ddcnn_core::datasets::{Sample, SceneClass};
    use ddcnn_core::features::{LogMelConfig, MelSpectrogram};
    let mut r = rng(seed);
    let cfg = LogMelConfig::default();
    SceneClass::ALL
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, n_per_class))
        .enumerate()
        .map(|(i, label)| {
            let data: Vec<f32> = (0..640 * 64).map(|_| r.random_range(-1.0..1.0)).collect();
            Sample {
                features: MelSpectrogram::from_values(Tensor::from_vec([1, 640, 64], data).unwrap(), &cfg),
                label,
                source: format!("random/{i}"),
            }
        })
        .collect()
}

/// Output-shape and parameter cells of the published architecture tables, one entry per
/// table row (the CNN-5 table's repeated first row counted once).
pub const CNN5_TABLE: [(&str, [i64; 4], usize); 9] = [
    ("Conv2d-1", [-1, 64, 640, 64], 1600),
    ("BatchNorm2d-2", [-1, 64, 640, 64], 128),
    ("Conv2d-3", [-1, 128, 320, 32], 204_800),
    ("BatchNorm2d-4", [-1, 128, 320, 32], 256),
    ("Conv2d-5", [-1, 256, 160, 16], 819_200),
    ("BatchNorm2d-6", [-1, 256, 160, 16], 512),
    ("Conv2d-7", [-1, 512, 80, 8], 3_276_800),
    ("BatchNorm2d-8", [-1, 512, 80, 8], 1024),
    ("Linear-13", [-1, 3, 0, 0], 1539),
];

pub const DDCNN_TABLE: [(&str, [i64; 4], usize); 13] = [
    ("Conv2d-1", [-1, 64, 640, 64], 1664),
    ("BatchNorm2d-2", [-1, 64, 640, 64], 128),
    ("Conv2d-3", [-1, 64, 640, 64], 1664),
    ("BatchNorm2d-4", [-1, 64, 640, 64], 128),
    ("Conv2d-5", [-1, 128, 320, 32], 6528),
    ("BatchNorm2d-6", [-1, 128, 320, 32], 256),
    ("Conv2d-7", [-1, 128, 160, 16], 12_928),
    ("BatchNorm2d-8", [-1, 128, 160, 16], 256),
    ("Conv2d-9", [-1, 256, 80, 8], 102_656),
    ("BatchNorm2d-10", [-1, 256, 80, 8], 512),
    ("Disout-11", [-1, 256, 40, 4], 0),
    ("LinearScheduler-12", [-1, 256, 40, 4], 0),
    ("Linear-13", [-1, 3, 0, 0], 771),
];

/// Shape cell with the zero padding of 2-D rows stripped.
pub fn table_shape(cell: &[i64; 4]) -> Vec<i64> {
    cell.iter().copied().take_while(|&d| d != 0).collect()
}

/// Bytes of parameter payload in a checkpoint, read straight from the documented file
/// layout (batchnorm running statistics excluded).
pub fn checkpoint_param_bytes(bytes: &[u8]) -> usize {
    let mut cur = std::io::Cursor::new(bytes);
    let mut take = |n: usize| {
        use std::io::Read;
        let mut buf = vec![0u8; n];
        cur.read_exact(&mut buf).expect("checkpoint ends mid-record");
        (buf, cur.position() as usize)
    };
    let u32_at = |s: (Vec<u8>, usize)| u32::from_le_bytes(s.0.try_into().unwrap()) as usize;
    assert_eq!(take(4).0, b"DDCN");
    take(4);
    let name_len = u32_at(take(4));
    take(name_len);
    let layers = u32_at(take(4));
    for _ in 0..layers {
        let kind = take(1).0[0];
        let label_len = u32_at(take(4));
        take(label_len);
        let fields = match kind {
            0 => 37,
            1 => 20,
            2 | 4 => 0,
            3 => 17,
            5 => 40,
            6 => 9,
            k => panic!("unknown layer kind {k}"),
        };
        take(fields);
    }
    let mut pos = take(16).1;
    let mut param_bytes = 0;
    while pos < bytes.len() {
        let name_len = u32_at(take(4));
        let name = String::from_utf8(take(name_len).0).unwrap();
        assert_eq!(take(1).0[0], 0, "f32 payloads");
        let rank = u32_at(take(4));
        let mut n = 1;
        for _ in 0..rank {
            n *= u64::from_le_bytes(take(8).0.try_into().unwrap()) as usize;
        }
        pos = take(4 * n).1;
        if !name.contains("running_") {
            param_bytes += 4 * n;
        }
    }
    param_bytes
}
