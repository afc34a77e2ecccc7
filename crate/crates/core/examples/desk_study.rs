//! Trains the desk-scale setup with and without the physics term and prints
//! validation curves, recovery and sub-Rayleigh recovery for each seed.
//!
//! cargo run --release --example desk_study -- [seeds] [epochs] [config.json]

use std::time::Instant;

use wgsr::cli::field_operators;
use wgsr::config::RunConfig;
use wgsr::dataset::{build_dataset, Split};
use wgsr::dataset::NoiseKind;
use wgsr::pipeline::{evaluate_clean, noise_sweep, train, Extraction, LossMode, NetworkPredictor};

fn main() -> wgsr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(1, |s| s.parse().expect("seed count"));
    let epochs: Option<usize> = args.get(2).map(|s| s.parse().expect("epochs"));
    let mut base = match args.get(3) {
        Some(path) => RunConfig::load(std::path::Path::new(path))?,
        None => RunConfig::desk(),
    };
    if let Some(e) = epochs {
        base.training.epochs = e;
    }
    let rayleigh_half = base.physics.waveguide.wavelength(base.physics.frequencies.center) / 2.0;
    let clock = Instant::now();
    let dataset = build_dataset(&base.dataset_header())?;
    println!("dataset: {:.1}s", clock.elapsed().as_secs_f64());
    let clock = Instant::now();
    let ops = field_operators(&base, None)?;
    println!("operators: {:.1}s ({} x {})", clock.elapsed().as_secs_f64(), ops[0].rows(), ops[0].cols());
    let ext = Extraction {
        plateau: base.plateau,
        threshold: base.eval.threshold,
        grid: base.physics.grid,
    };
    let test = dataset.split(Split::Test);
    for seed in 0..seeds {
        let cfg = base.clone().with_seed(seed);
        for mode in [LossMode::NllOnly, LossMode::NllPlusPi] {
            let clock = Instant::now();
            let out = train(&dataset, &cfg.network_config()?, &cfg.train_config(mode), &ops)?;
            let report = evaluate_clean(&NetworkPredictor(&out.params), test, &ext)?;
            let curve: Vec<String> = out.curve.iter().map(|e| format!("{:.4}", e.val)).collect();
            println!(
                "seed {seed} {mode}: {:.1}s best {} rate {:.3} sub-rayleigh {:?} spurious {}",
                clock.elapsed().as_secs_f64(),
                out.best_epoch,
                report.rate(),
                report.rate_below(rayleigh_half),
                report.spurious
            );
            println!("  val {}", curve.join(" "));
            if mode == LossMode::NllPlusPi {
                let predictor = NetworkPredictor(&out.params);
                for (kind, eps) in [
                    (NoiseKind::Gaussian, &cfg.eval.gaussian_eps),
                    (NoiseKind::Uniform, &cfg.eval.uniform_eps),
                ] {
                    let points = noise_sweep(&predictor, test, kind, eps, cfg.noise_seed(), &ext)?;
                    let rates: Vec<String> = points.iter().map(|p| format!("{}:{:.3}", p.epsilon, p.rate)).collect();
                    println!("  {kind} {}", rates.join(" "));
                }
            }
        }
    }
    Ok(())
}
