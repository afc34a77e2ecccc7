//! The `synth`, `km`, `train` and `eval` commands. The binary parses flags
//! and calls into these; tests call them directly.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{RunConfig, RunManifest, Timing};
use crate::dataset::{Dataset, NoiseKind, Split};
use crate::error::{Error, Result};
use crate::imaging::argmax_pixel;
use crate::io::{atomic_write, matrix_csv, pgm_bytes};
use crate::loss::{FieldOperator, OperatorSpec};
use crate::nn::NetworkParams;
use crate::pipeline::{
    evaluate_clean, loss_curves_csv, mean_filter, min_dist_csv, min_distance_sweep, noise_csv, noise_sweep,
    predict_sources, recovery_csv, train, DistanceBins, Extraction, LabelPassthrough, LossMode, NetworkPredictor,
    NoisePoint, Predictor,
};
use crate::physics::ResponseTensor;

pub const DATASET_FILE: &str = "dataset.wgsr";
pub const CHECKPOINT_FILE: &str = "checkpoint.wgnn";

struct Run {
    manifest: RunManifest,
    out: PathBuf,
    clock: Instant,
}

impl Run {
    fn start(command: &str, cfg: &RunConfig, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Run {
            manifest: RunManifest::new(command, cfg)?,
            out: out.to_path_buf(),
            clock: Instant::now(),
        })
    }

    fn lap(&mut self, step: &str) {
        self.manifest.timings.push(Timing {
            step: step.into(),
            seconds: self.clock.elapsed().as_secs_f64(),
        });
        self.clock = Instant::now();
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        atomic_write(&path, bytes)?;
        self.manifest.artifacts.push(path.display().to_string());
        Ok(path)
    }

    fn finish(mut self) -> Result<()> {
        let name = format!("manifest_{}.json", self.manifest.command);
        self.manifest.write(&self.out.join(name))
    }
}

/// Generates the dataset described by `cfg` into `out/dataset.wgsr`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<PathBuf> {
    cfg.validate()?;
    let mut run = Run::start("synth", cfg, out)?;
    let dataset = crate::dataset::build_dataset(&cfg.dataset_header())?;
    run.lap("generate");
    let path = out.join(DATASET_FILE);
    dataset.write(&path, overwrite)?;
    run.manifest.artifacts.push(path.display().to_string());
    run.lap("write");
    run.finish()?;
    Ok(path)
}

#[derive(Clone, Debug, Serialize)]
pub struct KmSummary {
    pub sample: usize,
    pub argmax: (usize, usize),
    pub csv: PathBuf,
    pub pgm: PathBuf,
    pub truth: PathBuf,
}

/// Kirchhoff-migration image of one dataset sample, exported as CSV and PGM
/// with the true source locations alongside.
pub fn cmd_km(cfg: &RunConfig, dataset: &Path, sample: usize, out: &Path) -> Result<KmSummary> {
    cfg.validate()?;
    let data = Dataset::read(dataset)?;
    let s = data
        .samples
        .iter()
        .find(|s| s.id == sample)
        .ok_or_else(|| Error::invalid("sample", format!("no sample with id {sample}")))?;
    let mut run = Run::start("km", cfg, out)?;
    let physics = &data.header.physics;
    let img = physics.km()?.image(&s.response)?;
    run.lap("migrate");
    let grid = physics.grid;
    let modulus = img.modulus();
    let csv = run.write(&format!("km_{sample}.csv"), matrix_csv(&modulus, grid.n_x, grid.n_y).as_bytes())?;
    let pgm = run.write(&format!("km_{sample}.pgm"), &pgm_bytes(&modulus, grid.n_x, grid.n_y))?;
    let mut truth_csv = String::from("x,y,ix,iy\n");
    for p in &s.sources.sources {
        let (ix, iy) = grid.nearest_pixel(*p);
        truth_csv.push_str(&format!("{},{},{},{}\n", p.x, p.y, ix, iy));
    }
    let truth = run.write(&format!("km_{sample}_truth.csv"), truth_csv.as_bytes())?;
    run.finish()?;
    Ok(KmSummary {
        sample,
        argmax: argmax_pixel(&img),
        csv,
        pgm,
        truth,
    })
}

fn check_dataset(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    if data.header.physics != cfg.physics || data.header.plateau != cfg.plateau {
        return Err(Error::invalid(
            "dataset",
            "dataset was generated with different physics or plateau settings",
        ));
    }
    Ok(())
}

/// Field operators for the physics loss, cached under `cache_dir`.
pub fn field_operators(cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<Vec<FieldOperator>> {
    cfg.pi_frequencies()
        .into_iter()
        .map(|f| {
            let spec = OperatorSpec::new(
                &cfg.physics.waveguide,
                &cfg.physics.grid,
                f,
                cfg.loss.eval_stride,
                cfg.loss.self_offset,
                cfg.loss.n_modes,
            )?;
            FieldOperator::load_or_build(&spec, cache_dir)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub mode: LossMode,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub checkpoint: PathBuf,
    pub curves: PathBuf,
}

/// Trains on the dataset and writes `checkpoint.wgnn` and `loss_curves.csv`.
pub fn cmd_train(cfg: &RunConfig, dataset: &Path, mode: LossMode, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = Dataset::read(dataset)?;
    check_dataset(cfg, &data)?;
    let mut run = Run::start("train", cfg, out)?;
    let ops = match mode {
        LossMode::NllOnly => Vec::new(),
        LossMode::NllPlusPi => field_operators(cfg, Some(&out.join("cache")))?,
    };
    run.lap("operators");
    let result = train(&data, &cfg.network_config()?, &cfg.train_config(mode), &ops)?;
    run.lap("train");
    let checkpoint = run.write(CHECKPOINT_FILE, &result.params.to_bytes()?)?;
    let curves = run.write("loss_curves.csv", loss_curves_csv(&result.curve, mode).as_bytes())?;
    run.finish()?;
    let best_val_loss = result
        .curve
        .iter()
        .find(|e| e.epoch == result.best_epoch)
        .map_or(f64::NAN, |e| e.val);
    Ok(TrainSummary {
        mode,
        epochs_run: result.curve.len(),
        best_epoch: result.best_epoch,
        best_val_loss,
        checkpoint,
        curves,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    MinDistance,
    Gaussian,
    Uniform,
}

impl Sweep {
    pub const ALL: [Sweep; 3] = [Sweep::MinDistance, Sweep::Gaussian, Sweep::Uniform];
}

impl std::str::FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "min-dist" | "min_dist" => Ok(Sweep::MinDistance),
            "gaussian" => Ok(Sweep::Gaussian),
            "uniform" => Ok(Sweep::Uniform),
            other => Err(format!("unknown sweep '{other}' (expected min-dist, gaussian or uniform)")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub recovery_rate: f64,
    pub total_sources: usize,
    pub recovered: usize,
    pub missed: usize,
    pub spurious: usize,
    pub sub_rayleigh_rate: Option<f64>,
    pub noise: Vec<(String, f64, f64)>,
}

/// Recovery on the test split plus the requested sweeps. With
/// `perfect_labels` the network is replaced by the exact labels.
pub fn cmd_eval(
    cfg: &RunConfig,
    dataset: &Path,
    checkpoint: Option<&Path>,
    sweeps: &[Sweep],
    perfect_labels: bool,
    out: &Path,
) -> Result<EvalSummary> {
    cfg.validate()?;
    let data = Dataset::read(dataset)?;
    check_dataset(cfg, &data)?;
    let params = match checkpoint {
        Some(path) => {
            let p = NetworkParams::load(path)?;
            if p.config != cfg.network_config()? {
                return Err(Error::invalid(
                    "checkpoint",
                    "network configuration does not match the run configuration",
                ));
            }
            Some(p)
        }
        None => None,
    };
    let predictor: Box<dyn Predictor + '_> = match (&params, perfect_labels) {
        (_, true) => Box::new(LabelPassthrough),
        (Some(p), false) => Box::new(NetworkPredictor(p)),
        (None, false) => return Err(Error::invalid("checkpoint", "required unless --perfect-labels is set")),
    };
    let mut run = Run::start("eval", cfg, out)?;
    let test = data.split(Split::Test);
    let ext = Extraction {
        plateau: cfg.plateau,
        threshold: cfg.eval.threshold,
        grid: cfg.physics.grid,
    };
    let report = evaluate_clean(predictor.as_ref(), test, &ext)?;
    run.write("recovery.csv", recovery_csv(&report).as_bytes())?;
    run.lap("recovery");
    let rayleigh_half = cfg.physics.waveguide.wavelength(cfg.physics.frequencies.center) / 2.0;
    if sweeps.contains(&Sweep::MinDistance) {
        let bins = DistanceBins {
            min: cfg.eval.bin_min,
            max: cfg.eval.bin_max,
            width: cfg.eval.bin_width,
        };
        let sweep = min_distance_sweep(&report, bins, rayleigh_half)?;
        run.write("min_dist_sweep.csv", min_dist_csv(&sweep).as_bytes())?;
    }
    let mut points: Vec<NoisePoint> = Vec::new();
    for (sweep, kind, eps) in [
        (Sweep::Gaussian, NoiseKind::Gaussian, &cfg.eval.gaussian_eps),
        (Sweep::Uniform, NoiseKind::Uniform, &cfg.eval.uniform_eps),
    ] {
        if sweeps.contains(&sweep) {
            points.extend(noise_sweep(predictor.as_ref(), test, kind, eps, cfg.noise_seed(), &ext)?);
        }
    }
    if !points.is_empty() {
        run.write("noise_sweep.csv", noise_csv(&points).as_bytes())?;
    }
    run.lap("sweeps");
    write_triptychs(&mut run, predictor.as_ref(), &test[..cfg.eval.image_samples.min(test.len())], &ext)?;
    run.finish()?;
    Ok(EvalSummary {
        recovery_rate: report.rate(),
        total_sources: report.total_sources,
        recovered: report.recovered,
        missed: report.missed,
        spurious: report.spurious,
        sub_rayleigh_rate: report.rate_below(rayleigh_half),
        noise: points.iter().map(|p| (p.kind.to_string(), p.epsilon, p.rate)).collect(),
    })
}

/// Raw output, mean-filtered output and extracted peaks, side by side.
fn write_triptychs(
    run: &mut Run,
    predictor: &dyn Predictor,
    samples: &[crate::dataset::Sample],
    ext: &Extraction,
) -> Result<()> {
    let responses: Vec<&ResponseTensor> = samples.iter().map(|s| &s.response).collect();
    let preds = predictor.predict(samples, &responses)?;
    let peaks = predict_sources(predictor, samples, &responses, ext)?;
    for ((s, raw), found) in samples.iter().zip(&preds).zip(&peaks) {
        let filtered = mean_filter(raw, ext.plateau)?;
        let mut marks = vec![0.0; raw.values.len()];
        for &(ix, iy) in found {
            marks[ix * raw.n_y + iy] = 1.0;
        }
        let (rows, cols) = (raw.n_x, raw.n_y);
        let width = 3 * cols;
        let mut strip = vec![0.0; rows * width];
        for r in 0..rows {
            for (k, panel) in [&raw.values, &filtered.values, &marks].into_iter().enumerate() {
                strip[r * width + k * cols..r * width + (k + 1) * cols].copy_from_slice(&panel[r * cols..(r + 1) * cols]);
            }
        }
        let mut bytes = format!("P5\n{width} {rows}\n255\n").into_bytes();
        bytes.extend(strip.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        run.write(&format!("sample_{}_triptych.pgm", s.id), &bytes)?;
    }
    Ok(())
}
