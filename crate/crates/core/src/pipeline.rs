//! Training with validation-based early stopping, and the evaluation
//! protocol: mean filtering, peak extraction, recovery rates and the
//! min-distance and noise sweeps.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, snr_db, Dataset, LabelImage, NoiseKind, NoiseSpec, PlateauSpec, Sample, Split};
use crate::error::{Error, Result};
use crate::imaging::{Pixel, SearchGrid};
use crate::loss::{combined_loss, combined_output_grad, CrossEntropyVariant, FieldOperator, LossWeights};
use crate::nn::{
    adam_step, backward_batch, forward_batch, AdamConfig, AdamState, NetworkConfig, NetworkParams,
    ProbabilityImage,
};
use crate::physics::{ResponseTensor, SourceConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    NllOnly,
    NllPlusPi,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::NllOnly => "nll_only",
            LossMode::NllPlusPi => "nll_plus_pi",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    /// Used by `nll_plus_pi`; `nll_only` always optimizes the plain
    /// cross-entropy.
    pub weights: LossWeights,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub cross_entropy: CrossEntropyVariant,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("training.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("training.batch_size", "must be at least 1"));
        }
        self.weights.validate()
    }

    pub fn effective_weights(&self) -> LossWeights {
        match self.loss_mode {
            LossMode::NllOnly => LossWeights::nll_only(),
            LossMode::NllPlusPi => self.weights,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: NetworkParams,
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
}

fn batch_loss(
    params: &NetworkParams,
    samples: &[&Sample],
    ops: &[FieldOperator],
    weights: LossWeights,
    variant: CrossEntropyVariant,
) -> Result<f64> {
    let inputs: Vec<&ResponseTensor> = samples.iter().map(|s| &s.response).collect();
    let labels: Vec<LabelImage> = samples.iter().map(|s| s.label.clone()).collect();
    let preds: Vec<ProbabilityImage> = forward_batch(params, &inputs)?.into_iter().map(|(p, _)| p).collect();
    Ok(combined_loss(ops, &preds, &labels, weights, variant)?.combined)
}

/// Loss of `samples` in consecutive batches of `cfg.batch_size`, averaged
/// with batch-size weights, so it is on the scale of the training loss.
pub fn evaluate_loss(
    params: &NetworkParams,
    samples: &[Sample],
    cfg: &TrainConfig,
    ops: &[FieldOperator],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("dataset", "no samples to evaluate"));
    }
    let ops = ops_for(cfg, ops)?;
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        total += batch_loss(params, &refs, ops, cfg.effective_weights(), cfg.cross_entropy)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn ops_for<'a>(cfg: &TrainConfig, ops: &'a [FieldOperator]) -> Result<&'a [FieldOperator]> {
    match cfg.loss_mode {
        LossMode::NllOnly => Ok(&[]),
        LossMode::NllPlusPi if ops.is_empty() => Err(Error::invalid(
            "loss.operators",
            "nll_plus_pi needs at least one field operator",
        )),
        LossMode::NllPlusPi => Ok(ops),
    }
}

/// Trains from a seeded initialization with ADAM. Batches are reshuffled each
/// epoch; training stops once validation loss has not improved for
/// `patience` consecutive epochs.
pub fn train(
    dataset: &Dataset,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    ops: &[FieldOperator],
) -> Result<TrainOutput> {
    cfg.validate()?;
    net.validate()?;
    let train_set = dataset.split(Split::Train);
    let val_set = dataset.split(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("dataset.splits", "training needs train and validation samples"));
    }
    let ops = ops_for(cfg, ops)?;
    let weights = cfg.effective_weights();
    let mut params = NetworkParams::init(net, derive_seed(cfg.seed, 1))?;
    let mut adam = AdamState::new(&params, cfg.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, params.clone(), 0);
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<&ResponseTensor> = chunk.iter().map(|&i| &train_set[i].response).collect();
            let labels: Vec<LabelImage> = chunk.iter().map(|&i| train_set[i].label.clone()).collect();
            let (preds, caches): (Vec<_>, Vec<_>) = forward_batch(&params, &inputs)?.into_iter().unzip();
            let report = combined_loss(ops, &preds, &labels, weights, cfg.cross_entropy)?;
            if !report.combined.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite batch loss (nll {}, pi {})", report.nll, report.pi),
                });
            }
            total += report.combined * chunk.len() as f64;
            let grad_out = combined_output_grad(ops, &preds, &labels, weights, cfg.cross_entropy)?;
            let grads = backward_batch(&params, &caches, &grad_out)?;
            if !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            adam_step(&mut params, &grads, &mut adam)?;
        }
        let val = evaluate_loss(&params, val_set, cfg, ops)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "non-finite validation loss".into(),
            });
        }
        curve.push(EpochLoss {
            epoch,
            train: total / train_set.len() as f64,
            val,
        });
        if val < best.0 {
            best = (val, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutput {
        params: best.1,
        curve,
        best_epoch: best.2,
    })
}

pub fn loss_curves_csv(curve: &[EpochLoss], mode: LossMode) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,mode\n");
    for e in curve {
        s.push_str(&format!("{},{:.12e},{:.12e},{}\n", e.epoch, e.train, e.val, mode));
    }
    s
}

/// Box filter of size `N_p x N_p` (mean of each pixel's neighborhood,
/// including itself), zero-padded at the borders.
pub fn mean_filter(img: &ProbabilityImage, plateau: PlateauSpec) -> Result<ProbabilityImage> {
    let size = plateau.size;
    if size.is_multiple_of(2) {
        return Err(Error::invalid("plateau.size", "mean filter needs an odd size"));
    }
    let (n_x, n_y) = (img.n_x, img.n_y);
    let half = (size / 2) as isize;
    let norm = (size * size) as f64;
    let mut out = vec![0.0; n_x * n_y];
    for ix in 0..n_x as isize {
        for iy in 0..n_y as isize {
            let mut sum = 0.0;
            for jx in (ix - half).max(0)..=(ix + half).min(n_x as isize - 1) {
                for jy in (iy - half).max(0)..=(iy + half).min(n_y as isize - 1) {
                    sum += img.values[jx as usize * n_y + jy as usize];
                }
            }
            out[ix as usize * n_y + iy as usize] = sum / norm;
        }
    }
    Ok(ProbabilityImage {
        n_x,
        n_y,
        values: out,
    })
}

/// One pixel per 4-connected component of `{mean_filter(img) >= threshold}`:
/// the component's maximum (ties to the lowest row-major index). Sorted by
/// row-major index.
pub fn extract_sources(img: &ProbabilityImage, plateau: PlateauSpec, threshold: f64) -> Result<Vec<Pixel>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("eval.threshold", "must lie in (0, 1)"));
    }
    let smooth = mean_filter(img, plateau)?;
    Ok(peaks(&smooth, threshold))
}

fn peaks(img: &ProbabilityImage, threshold: f64) -> Vec<Pixel> {
    let (n_x, n_y) = (img.n_x, img.n_y);
    let v = &img.values;
    let mut seen = vec![false; v.len()];
    let mut out = Vec::new();
    for start in 0..v.len() {
        if seen[start] || v[start] < threshold {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut best = start;
        while let Some(i) = stack.pop() {
            if v[i] > v[best] || (v[i] == v[best] && i < best) {
                best = i;
            }
            let (ix, iy) = (i / n_y, i % n_y);
            let mut neighbors = Vec::with_capacity(4);
            if ix > 0 {
                neighbors.push(i - n_y);
            }
            if ix + 1 < n_x {
                neighbors.push(i + n_y);
            }
            if iy > 0 {
                neighbors.push(i - 1);
            }
            if iy + 1 < n_y {
                neighbors.push(i + 1);
            }
            for j in neighbors {
                if !seen[j] && v[j] >= threshold {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        out.push(best);
    }
    out.sort_unstable();
    out.into_iter().map(|i| (i / n_y, i % n_y)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOutcome {
    pub id: usize,
    pub n_sources: usize,
    pub min_distance: Option<f64>,
    pub recovered: usize,
    pub spurious: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub total_sources: usize,
    pub recovered: usize,
    pub missed: usize,
    pub spurious: usize,
    pub samples: Vec<SampleOutcome>,
}

impl EvalReport {
    /// Recovered over total sources; 0 when there are no sources.
    pub fn rate(&self) -> f64 {
        if self.total_sources == 0 {
            0.0
        } else {
            self.recovered as f64 / self.total_sources as f64
        }
    }

    /// Pooled recovery over multi-source samples whose minimum separation is
    /// below `distance`.
    pub fn rate_below(&self, distance: f64) -> Option<f64> {
        let (n, r) = self
            .samples
            .iter()
            .filter(|s| s.min_distance.is_some_and(|d| d < distance))
            .fold((0, 0), |(n, r), s| (n + s.n_sources, r + s.recovered));
        (n > 0).then(|| r as f64 / n as f64)
    }
}

/// A true source counts as recovered iff its own pixel is among the
/// predictions. Predictions on no true pixel are tallied as spurious.
pub fn recovery_rate(
    ids: &[usize],
    predicted: &[Vec<Pixel>],
    truth: &[SourceConfig],
    grid: &SearchGrid,
) -> Result<EvalReport> {
    if predicted.len() != truth.len() || ids.len() != truth.len() {
        return Err(Error::shape("recovery lists", truth.len(), predicted.len()));
    }
    let mut report = EvalReport {
        total_sources: 0,
        recovered: 0,
        missed: 0,
        spurious: 0,
        samples: Vec::with_capacity(truth.len()),
    };
    for ((&id, pred), cfg) in ids.iter().zip(predicted).zip(truth) {
        let true_px: Vec<Pixel> = cfg.sources.iter().map(|&p| grid.nearest_pixel(p)).collect();
        let recovered = true_px.iter().filter(|p| pred.contains(p)).count();
        let spurious = pred.iter().filter(|p| !true_px.contains(p)).count();
        report.total_sources += true_px.len();
        report.recovered += recovered;
        report.missed += true_px.len() - recovered;
        report.spurious += spurious;
        report.samples.push(SampleOutcome {
            id,
            n_sources: true_px.len(),
            min_distance: crate::dataset::min_pairwise_distance(cfg),
            recovered,
            spurious,
        });
    }
    Ok(report)
}

pub fn recovery_csv(report: &EvalReport) -> String {
    let mut s = String::from("sample_id,n_sources,min_dist,recovered,spurious\n");
    for o in &report.samples {
        let d = o.min_distance.map(|d| format!("{d:.6}")).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{}\n", o.id, o.n_sources, d, o.recovered, o.spurious));
    }
    s
}

/// Anything that maps test samples to probability images.
pub trait Predictor {
    fn predict(&self, samples: &[Sample], responses: &[&ResponseTensor]) -> Result<Vec<ProbabilityImage>>;
}

pub struct NetworkPredictor<'a>(pub &'a NetworkParams);

impl Predictor for NetworkPredictor<'_> {
    fn predict(&self, _samples: &[Sample], responses: &[&ResponseTensor]) -> Result<Vec<ProbabilityImage>> {
        let mut out = Vec::with_capacity(responses.len());
        for chunk in responses.chunks(32) {
            out.extend(forward_batch(self.0, chunk)?.into_iter().map(|(p, _)| p));
        }
        Ok(out)
    }
}

/// Returns each sample's exact label and ignores the response.
pub struct LabelPassthrough;

impl Predictor for LabelPassthrough {
    fn predict(&self, samples: &[Sample], _responses: &[&ResponseTensor]) -> Result<Vec<ProbabilityImage>> {
        Ok(samples
            .iter()
            .map(|s| ProbabilityImage {
                n_x: s.label.n_x,
                n_y: s.label.n_y,
                values: s.label.to_f64(),
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extraction {
    pub plateau: PlateauSpec,
    pub threshold: f64,
    pub grid: SearchGrid,
}

/// Predicted source pixels for every sample, given (possibly perturbed)
/// responses.
pub fn predict_sources<P: Predictor + ?Sized>(
    predictor: &P,
    samples: &[Sample],
    responses: &[&ResponseTensor],
    ext: &Extraction,
) -> Result<Vec<Vec<Pixel>>> {
    predictor
        .predict(samples, responses)?
        .iter()
        .map(|img| extract_sources(img, ext.plateau, ext.threshold))
        .collect()
}

pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    samples: &[Sample],
    responses: &[&ResponseTensor],
    ext: &Extraction,
) -> Result<EvalReport> {
    let predicted = predict_sources(predictor, samples, responses, ext)?;
    let ids: Vec<usize> = samples.iter().map(|s| s.id).collect();
    let truth: Vec<SourceConfig> = samples.iter().map(|s| s.sources.clone()).collect();
    recovery_rate(&ids, &predicted, &truth, &ext.grid)
}

pub fn evaluate_clean<P: Predictor + ?Sized>(predictor: &P, samples: &[Sample], ext: &Extraction) -> Result<EvalReport> {
    let responses: Vec<&ResponseTensor> = samples.iter().map(|s| &s.response).collect();
    evaluate(predictor, samples, &responses, ext)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBins {
    pub min: f64,
    pub max: f64,
    pub width: f64,
}

impl Default for DistanceBins {
    fn default() -> Self {
        DistanceBins {
            min: 4.0,
            max: 60.0,
            width: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinRate {
    pub lo: f64,
    pub hi: f64,
    pub sources: usize,
    pub recovered: usize,
}

impl BinRate {
    pub fn rate(&self) -> f64 {
        self.recovered as f64 / self.sources as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinDistanceSweep {
    /// Nonempty bins only, in increasing distance. Distances below `min`
    /// or at least `max` fall into open-ended edge bins.
    pub bins: Vec<BinRate>,
    pub rayleigh_half: f64,
    pub single_source_samples: usize,
}

/// Bins multi-source samples by their minimum source separation.
pub fn min_distance_sweep(report: &EvalReport, bins: DistanceBins, rayleigh_half: f64) -> Result<MinDistanceSweep> {
    if !(bins.width > 0.0 && bins.max > bins.min && bins.min >= 0.0) {
        return Err(Error::invalid("eval.bins", "need width > 0 and max > min >= 0"));
    }
    let n_inner = ((bins.max - bins.min) / bins.width).ceil() as usize;
    let mut edges: Vec<(f64, f64)> = vec![(0.0, bins.min)];
    edges.extend((0..n_inner).map(|i| {
        let lo = bins.min + i as f64 * bins.width;
        (lo, (lo + bins.width).min(bins.max))
    }));
    edges.push((bins.max, f64::INFINITY));
    let mut acc = vec![(0usize, 0usize); edges.len()];
    let mut singles = 0;
    for s in &report.samples {
        let Some(d) = s.min_distance else {
            singles += 1;
            continue;
        };
        let k = if d < bins.min {
            0
        } else if d >= bins.max {
            edges.len() - 1
        } else {
            (1 + ((d - bins.min) / bins.width).floor() as usize).min(n_inner)
        };
        acc[k].0 += s.n_sources;
        acc[k].1 += s.recovered;
    }
    Ok(MinDistanceSweep {
        bins: edges
            .into_iter()
            .zip(acc)
            .filter(|(_, (n, _))| *n > 0)
            .map(|((lo, hi), (sources, recovered))| BinRate {
                lo,
                hi,
                sources,
                recovered,
            })
            .collect(),
        rayleigh_half,
        single_source_samples: singles,
    })
}

pub fn min_dist_csv(sweep: &MinDistanceSweep) -> String {
    let mut s = String::from("bin_lo,bin_hi,sources,recovered,rate,rayleigh_half\n");
    for b in &sweep.bins {
        s.push_str(&format!(
            "{},{},{},{},{:.6},{:.6}\n",
            b.lo,
            b.hi,
            b.sources,
            b.recovered,
            b.rate(),
            sweep.rayleigh_half
        ));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisePoint {
    pub kind: NoiseKind,
    pub epsilon: f64,
    /// `None` for a noiseless level.
    pub snr_db: Option<f64>,
    pub rate: f64,
}

/// Recovery under noise at every level in `eps`. Noise for sample `q` at
/// level `e` is seeded from `(seed, e, q)` only.
pub fn noise_sweep<P: Predictor + ?Sized>(
    predictor: &P,
    samples: &[Sample],
    kind: NoiseKind,
    eps: &[f64],
    seed: u64,
    ext: &Extraction,
) -> Result<Vec<NoisePoint>> {
    eps.iter()
        .map(|&e| {
            let spec = NoiseSpec::new(kind, e, derive_seed(seed, e.to_bits()))?;
            let noisy: Vec<ResponseTensor> = samples.iter().map(|s| spec.for_sample(s.id).apply(&s.response)).collect();
            let refs: Vec<&ResponseTensor> = noisy.iter().collect();
            let report = evaluate(predictor, samples, &refs, ext)?;
            Ok(NoisePoint {
                kind,
                epsilon: e,
                snr_db: snr_db(e).ok(),
                rate: report.rate(),
            })
        })
        .collect()
}

pub fn noise_csv(points: &[NoisePoint]) -> String {
    let mut s = String::from("kind,epsilon,snr_db,rate\n");
    for p in points {
        let snr = p.snr_db.map(|v| format!("{v:.3}")).unwrap_or_else(|| "inf".into());
        s.push_str(&format!("{},{},{},{:.6}\n", p.kind, p.epsilon, snr, p.rate));
    }
    s
}
