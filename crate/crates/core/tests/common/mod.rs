//! Finite-difference and brute-force oracles shared by several test targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wgsr::dataset::LabelImage;
use wgsr::imaging::{KirchhoffMigration, SearchGrid};
use wgsr::loss::{
    build_field_operator, combined_loss, combined_output_grad, cross_entropy_grad, cross_entropy_with, pi_loss,
    pi_loss_output_grad, CrossEntropyVariant, FieldOperator, LossWeights, OperatorSpec,
};
use wgsr::nn::{backward_batch, forward_batch, NetworkConfig, NetworkParams, ProbabilityImage};
use wgsr::physics::{ArrayGeometry, FrequencyGrid, ModalBasis, ResponseTensor, Truncation, WaveguideModel};

pub const STEP: f64 = 1e-5;
pub const C0: f64 = 1500.0;
pub const DEPTH: f64 = 200.0;

pub fn tiny_config() -> NetworkConfig {
    NetworkConfig::new((4, 3), (6, 5), 2, 2, 3).unwrap()
}

/// Every parameter uniform on [-0.5, 0.5], biases included.
pub fn random_params(cfg: &NetworkConfig, seed: u64) -> NetworkParams {
    let mut p = NetworkParams::zeros(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    p
}

pub fn random_response(n_r: usize, n_f: usize, seed: u64) -> ResponseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_r * n_f)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ResponseTensor::from_vec(n_r, n_f, data).unwrap()
}

pub fn random_label(n_x: usize, n_y: usize, seed: u64) -> LabelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelImage {
        n_x,
        n_y,
        pixels: (0..n_x * n_y).map(|_| rng.random_bool(0.3) as u8).collect(),
    }
}

pub fn random_probs(n_x: usize, n_y: usize, seed: u64) -> ProbabilityImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProbabilityImage {
        n_x,
        n_y,
        values: (0..n_x * n_y).map(|_| rng.random_range(0.05..0.95)).collect(),
    }
}

/// Largest entrywise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn central_difference(x0: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(&x);
            x[i] = orig - STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn tensor_names(p: &NetworkParams) -> Vec<String> {
    let mut names = vec!["dense.weights".to_string(), "dense.bias".to_string()];
    for i in 0..p.convs.len() {
        names.push(format!("conv{i}.weights"));
        names.push(format!("conv{i}.bias"));
    }
    names
}

/// Per-tensor relative error of `grads` against finite differences of
/// `objective` around `params`.
pub fn param_errors(
    params: &NetworkParams,
    grads: &NetworkParams,
    objective: impl Fn(&NetworkParams) -> f64,
) -> Vec<(String, f64)> {
    tensor_names(params)
        .into_iter()
        .enumerate()
        .map(|(t, name)| {
            let base = params.tensors()[t].to_vec();
            let numeric = central_difference(&base, |x| {
                let mut p = params.clone();
                p.tensors_mut()[t].copy_from_slice(x);
                objective(&p)
            });
            (name, max_rel_error(grads.tensors()[t], &numeric, 1e-6))
        })
        .collect()
}

/// Gradient of a random linear functional of the network output.
pub fn network_errors(cfg: &NetworkConfig, seed: u64) -> Vec<(String, f64)> {
    let params = random_params(cfg, seed);
    let inputs = [random_response(cfg.n_r, cfg.n_f, seed + 1), random_response(cfg.n_r, cfg.n_f, seed + 2)];
    let refs: Vec<&ResponseTensor> = inputs.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let weights: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..cfg.pixels()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let objective = |p: &NetworkParams| -> f64 {
        forward_batch(p, &refs)
            .unwrap()
            .iter()
            .zip(&weights)
            .map(|((img, _), w)| img.values.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let caches: Vec<_> = forward_batch(&params, &refs).unwrap().into_iter().map(|(_, c)| c).collect();
    let grads = backward_batch(&params, &caches, &weights).unwrap();
    param_errors(&params, &grads, objective)
}

pub fn cross_entropy_error(variant: CrossEntropyVariant) -> f64 {
    let label = random_label(6, 5, 31);
    let pred = random_probs(6, 5, 32);
    let analytic = cross_entropy_grad(&pred, &label, variant).unwrap();
    let numeric = central_difference(&pred.values, |x| {
        let p = ProbabilityImage {
            values: x.to_vec(),
            ..pred.clone()
        };
        cross_entropy_with(&p, &label, variant).unwrap()
    });
    max_rel_error(&analytic, &numeric, 1e-8)
}

pub fn small_operator(n_x: usize, n_y: usize, stride: usize) -> FieldOperator {
    let model = WaveguideModel::new(C0, DEPTH).unwrap();
    let grid = SearchGrid::new(500.0, 520.0, 40.0, 160.0, n_x, n_y).unwrap();
    OperatorSpec::new(&model, &grid, 32.0625, stride, None, Some(120))
        .unwrap()
        .build()
        .unwrap()
}

pub fn pi_loss_error() -> f64 {
    let op = small_operator(6, 5, 2);
    let labels = [random_label(6, 5, 41), random_label(6, 5, 42)];
    let preds = [random_probs(6, 5, 43), random_probs(6, 5, 44)];
    let analytic = pi_loss_output_grad(&op, &preds, &labels).unwrap();
    (0..2)
        .map(|q| {
            let numeric = central_difference(&preds[q].values, |x| {
                let mut p = preds.clone();
                p[q].values = x.to_vec();
                pi_loss(&op, &p, &labels).unwrap()
            });
            max_rel_error(&analytic[q], &numeric, 1e-8)
        })
        .fold(0.0, f64::max)
}

/// Combined objective through the network, per parameter tensor.
pub fn combined_errors() -> Vec<(String, f64)> {
    let cfg = tiny_config();
    let params = random_params(&cfg, 51);
    let ops = [small_operator(6, 5, 1)];
    let inputs = [random_response(4, 3, 52), random_response(4, 3, 53)];
    let refs: Vec<&ResponseTensor> = inputs.iter().collect();
    let labels = [random_label(6, 5, 54), random_label(6, 5, 55)];
    let weights = LossWeights::default();
    let variant = CrossEntropyVariant::TwoSided;
    let objective = |p: &NetworkParams| -> f64 {
        let preds: Vec<_> = forward_batch(p, &refs).unwrap().into_iter().map(|(i, _)| i).collect();
        combined_loss(&ops, &preds, &labels, weights, variant).unwrap().combined
    };
    let (preds, caches): (Vec<_>, Vec<_>) = forward_batch(&params, &refs).unwrap().into_iter().unzip();
    let report = combined_loss(&ops, &preds, &labels, weights, variant).unwrap();
    assert!(report.pi > 0.0 && report.nll > 0.0);
    let g_out = combined_output_grad(&ops, &preds, &labels, weights, variant).unwrap();
    let grads = backward_batch(&params, &caches, &g_out).unwrap();
    param_errors(&params, &grads, objective)
}

/// Truncated modal sum for the Green's function, written from the formula.
pub fn green(k: f64, n_modes: usize, x: (f64, f64), xs: (f64, f64)) -> Complex64 {
    let dx = (x.0 - xs.0).abs();
    let mut sum = Complex64::new(0.0, 0.0);
    for n in 1..=n_modes {
        let mu = (n as f64 * PI / DEPTH).powi(2);
        let beta = if k * k > mu {
            Complex64::new((k * k - mu).sqrt(), 0.0)
        } else {
            Complex64::new(0.0, (mu - k * k).sqrt())
        };
        let phase = (Complex64::i() * beta * dx).exp();
        let s = (mu.sqrt() * x.1).sin() * (mu.sqrt() * xs.1).sin();
        sum += phase / beta * s;
    }
    sum * (2.0 / DEPTH).sqrt()
}

fn max_abs(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = max_abs(b);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

/// Relative max-norm difference between `km_image` and a direct sum on an
/// 8x7 grid.
pub fn km_oracle_error() -> f64 {
    let model = WaveguideModel::new(C0, DEPTH).unwrap();
    let freqs = FrequencyGrid::new(32.0625, 12.825, 5).unwrap();
    let array = ArrayGeometry::uniform(0.0, 5.0, 20.0, 9);
    let grid = SearchGrid::new(490.0, 570.0, 10.0, 190.0, 8, 7).unwrap();
    let n_modes = 40;
    let response = random_response(9, 5, 3);
    let km = KirchhoffMigration::new(&model, &freqs, &array, &grid, Some(Truncation::Fixed(n_modes)))
        .unwrap()
        .image(&response)
        .unwrap();
    let mut expected = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (j, &f) in freqs.frequencies().iter().enumerate() {
        let k = 2.0 * PI * f / C0;
        for ix in 0..grid.n_x {
            for iy in 0..grid.n_y {
                let pixel = (grid.x(ix), grid.y(iy));
                for r in 0..9 {
                    let rec = (0.0, 5.0 + 20.0 * r as f64);
                    expected[ix * grid.n_y + iy] += response.get(r, j).conj() * green(k, n_modes, rec, pixel);
                }
            }
        }
    }
    rel_diff(&km.values, &expected)
}

/// Same for `build_field_operator` on an 8x8 grid at strides 1 and 3.
pub fn field_operator_oracle_error() -> f64 {
    let model = WaveguideModel::new(C0, DEPTH).unwrap();
    let grid = SearchGrid::new(500.0, 514.0, 20.0, 180.0, 8, 8).unwrap();
    let k = 2.0 * PI * 32.0625 / C0;
    let n_modes = 200;
    let self_offset = grid.h_x() / 2.0;
    let mut worst: f64 = 0.0;
    for stride in [1, 3] {
        let basis = ModalBasis::new(&model, k, n_modes).unwrap();
        let op = build_field_operator(&model, &basis, &grid, stride, self_offset).unwrap();
        let mut expected = Vec::new();
        for ix in (0..grid.n_x).step_by(stride) {
            for iy in (0..grid.n_y).step_by(stride) {
                let eval = (grid.x(ix), grid.y(iy));
                for jx in 0..grid.n_x {
                    for jy in 0..grid.n_y {
                        let src = (grid.x(jx), grid.y(jy));
                        expected.push(if (ix, iy) == (jx, jy) {
                            green(k, n_modes, (eval.0 + self_offset, eval.1), src)
                        } else {
                            green(k, n_modes, eval, src)
                        });
                    }
                }
            }
        }
        worst = worst.max(rel_diff(&op.matrix, &expected));
    }
    worst
}

/// Relative difference of `pi_loss` from an explicit triple loop.
pub fn pi_loss_oracle_error() -> f64 {
    let model = WaveguideModel::new(C0, DEPTH).unwrap();
    let grid = SearchGrid::new(500.0, 510.0, 30.0, 170.0, 6, 8).unwrap();
    let op = OperatorSpec::new(&model, &grid, 32.0625, 2, None, Some(80))
        .unwrap()
        .build()
        .unwrap();
    let n_b = 3;
    let labels: Vec<LabelImage> = (0..n_b).map(|q| random_label(6, 8, 90 + q as u64)).collect();
    let preds: Vec<ProbabilityImage> = (0..n_b).map(|q| random_probs(6, 8, 95 + q as u64)).collect();
    let mut total = 0.0;
    for q in 0..n_b {
        for m in 0..op.rows() {
            let mut r = Complex64::new(0.0, 0.0);
            for j in 0..op.cols() {
                r += op.matrix[m * op.cols() + j] * (labels[q].pixels[j] as f64 - preds[q].values[j]);
            }
            total += r.norm_sqr();
        }
    }
    let expected = total.sqrt() / (n_b * 48) as f64;
    (pi_loss(&op, &preds, &labels).unwrap() - expected).abs() / expected
}
