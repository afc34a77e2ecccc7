//! Run configuration (JSON), its validation, and the run manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{derive_seed, DatasetHeader, PlateauSpec, SourceSampling, Splits};
use crate::error::{Error, Result};
use crate::imaging::{KirchhoffMigration, SearchGrid};
use crate::io::atomic_write;
use crate::loss::{CrossEntropyVariant, LossWeights};
use crate::nn::{AdamConfig, NetworkConfig};
use crate::physics::{
    default_mode_count, propagating_mode_count, ArrayGeometry, Boundary, FrequencyGrid, ResponseSynthesizer,
    Truncation, WaveguideModel,
};
use crate::pipeline::{LossMode, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    /// Central frequency (Hz).
    pub center: f64,
    /// Total bandwidth (Hz); frequencies are equispaced over `center +- bandwidth / 2`.
    pub bandwidth: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub x: f64,
    /// Depth of the first receiver.
    pub first: f64,
    pub spacing: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub waveguide: WaveguideModel,
    pub frequencies: FrequencySpec,
    pub array: ArraySpec,
    pub grid: SearchGrid,
    /// Fixed modal truncation; `None` applies the automatic rule.
    #[serde(default)]
    pub n_modes: Option<usize>,
}

fn field(path: &str, err: Error) -> Error {
    match err {
        Error::InvalidParameter { field: f, reason } => Error::InvalidParameter {
            field: format!("{path}.{f}"),
            reason,
        },
        other => other,
    }
}

fn require(ok: bool, path: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(path, reason))
    }
}

impl PhysicsConfig {
    pub fn paper() -> Self {
        let center = 32.0625;
        PhysicsConfig {
            waveguide: WaveguideModel {
                c0: 1500.0,
                depth: 200.0,
                boundary: Boundary::Dirichlet,
            },
            frequencies: FrequencySpec {
                center,
                bandwidth: 0.4 * center,
                count: 33,
            },
            array: ArraySpec {
                x: 0.0,
                first: 0.0,
                spacing: 2.5,
                count: 81,
            },
            grid: SearchGrid {
                x_min: 490.0,
                x_max: 570.0,
                y_min: 0.0,
                y_max: 200.0,
                n_x: 71,
                n_y: 51,
            },
            n_modes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.waveguide.validate().map_err(|e| field("physics", e))?;
        let f = &self.frequencies;
        require(
            f.center.is_finite() && f.center > 0.0,
            "physics.frequencies.center",
            "must be positive",
        )?;
        require(
            f.bandwidth.is_finite() && f.bandwidth >= 0.0 && f.bandwidth < 2.0 * f.center,
            "physics.frequencies.bandwidth",
            "must lie in [0, 2 * center)",
        )?;
        require(f.count >= 1, "physics.frequencies.count", "must be at least 1")?;
        self.frequency_grid().map_err(|e| field("physics.frequencies", e))?;
        let a = &self.array;
        require(a.count >= 1, "physics.array.count", "must be at least 1")?;
        require(
            a.spacing.is_finite() && a.spacing >= 0.0,
            "physics.array.spacing",
            "must be non-negative",
        )?;
        self.array_geometry()
            .validate(&self.waveguide)
            .map_err(|e| field("physics.array", e))?;
        self.grid
            .validate(Some(&self.waveguide))
            .map_err(|e| field("physics.grid", e))?;
        require(
            self.grid.min_offset_from(a.x) > 0.0,
            "physics.grid",
            "search region must not touch the array column",
        )?;
        if let Some(n) = self.n_modes {
            for k in self.frequency_grid()?.wavenumbers(&self.waveguide) {
                let m = propagating_mode_count(self.waveguide.depth, k)?;
                require(n >= m, "physics.n_modes", "fewer modes than propagate at the highest frequency")?;
            }
        }
        Ok(())
    }

    pub fn model(&self) -> WaveguideModel {
        self.waveguide
    }

    pub fn frequency_grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.frequencies.center, self.frequencies.bandwidth, self.frequencies.count)
    }

    pub fn array_geometry(&self) -> ArrayGeometry {
        ArrayGeometry::uniform(self.array.x, self.array.first, self.array.spacing, self.array.count)
    }

    /// Truncation valid for every source in the search region.
    pub fn truncation(&self) -> Truncation {
        match self.n_modes {
            Some(n) => Truncation::Fixed(n),
            None => Truncation::Auto {
                min_offset: self.grid.min_offset_from(self.array.x),
            },
        }
    }

    pub fn synthesizer(&self) -> Result<ResponseSynthesizer> {
        ResponseSynthesizer::new(
            &self.waveguide,
            &self.frequency_grid()?,
            &self.array_geometry(),
            self.truncation(),
        )
    }

    pub fn km(&self) -> Result<KirchhoffMigration> {
        KirchhoffMigration::new(
            &self.waveguide,
            &self.frequency_grid()?,
            &self.array_geometry(),
            &self.grid,
            Some(self.truncation()),
        )
    }

    pub fn describe(&self) -> Result<Description> {
        self.validate()?;
        let fc = self.frequencies.center;
        let kc = self.waveguide.wavenumber(fc);
        let wavelength = self.waveguide.wavelength(fc);
        let n_modes = match self.n_modes {
            Some(n) => n,
            None => default_mode_count(&self.waveguide, kc, self.grid.min_offset_from(self.array.x))?,
        };
        Ok(Description {
            wavenumber_center: kc,
            propagating_modes: propagating_mode_count(self.waveguide.depth, kc)?,
            wavelength_center: wavelength,
            rayleigh_half_wavelength: wavelength / 2.0,
            modes_at_center: n_modes,
            h_x: self.grid.h_x(),
            h_y: self.grid.h_y(),
            frequencies: self.frequency_grid()?.frequencies().to_vec(),
        })
    }
}

/// Derived constants printed by `--describe`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Description {
    pub wavenumber_center: f64,
    pub propagating_modes: usize,
    pub wavelength_center: f64,
    pub rayleigh_half_wavelength: f64,
    pub modes_at_center: usize,
    pub h_x: f64,
    pub h_y: f64,
    pub frequencies: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub channels: usize,
    pub conv_layers: usize,
    pub kernel_size: usize,
    #[serde(default = "one")]
    pub input_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub weights: LossWeights,
    pub cross_entropy: CrossEntropyVariant,
    /// Evaluation points of the field operator are every `eval_stride`-th node.
    pub eval_stride: usize,
    /// Self-interaction offset; half the horizontal pixel size when absent.
    #[serde(default)]
    pub self_offset: Option<f64>,
    /// Operator frequencies; the central frequency when absent.
    #[serde(default)]
    pub frequencies: Option<Vec<f64>>,
    #[serde(default)]
    pub n_modes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub threshold: f64,
    pub bin_min: f64,
    pub bin_max: f64,
    pub bin_width: f64,
    pub gaussian_eps: Vec<f64>,
    pub uniform_eps: Vec<f64>,
    /// Number of test samples exported as prediction images.
    pub image_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub adam: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub physics: PhysicsConfig,
    pub plateau: PlateauSpec,
    pub splits: Splits,
    pub sources: SourceSampling,
    pub network: NetworkSpec,
    pub training: TrainingSpec,
    pub loss: LossSpec,
    pub eval: EvalSpec,
    /// Master seed; dataset, training and noise streams derive from it.
    pub seed: u64,
    pub output_dir: String,
}

pub const SEED_DATASET: u64 = 1;
pub const SEED_TRAIN: u64 = 2;
pub const SEED_NOISE: u64 = 3;

impl Default for RunConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl RunConfig {
    pub fn paper() -> Self {
        RunConfig {
            physics: PhysicsConfig::paper(),
            plateau: PlateauSpec::default(),
            splits: Splits {
                train: 4050,
                val: 450,
                test: 500,
            },
            sources: SourceSampling::default(),
            network: NetworkSpec {
                channels: 8,
                conv_layers: 3,
                kernel_size: 3,
                input_scale: 1.0,
            },
            training: TrainingSpec {
                epochs: 50,
                batch_size: 8,
                patience: 5,
                adam: AdamConfig::default(),
            },
            loss: LossSpec {
                weights: LossWeights::default(),
                cross_entropy: CrossEntropyVariant::TwoSided,
                eval_stride: 1,
                self_offset: None,
                frequencies: None,
                n_modes: None,
            },
            eval: EvalSpec {
                threshold: 0.9,
                bin_min: 4.0,
                bin_max: 60.0,
                bin_width: 4.0,
                gaussian_eps: vec![1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0],
                uniform_eps: vec![0.0, 0.1, 0.25, 0.5],
                image_samples: 4,
            },
            seed: 0,
            output_dir: "out".into(),
        }
    }

    /// Reduced setup that trains in minutes on one core.
    pub fn desk() -> Self {
        let mut cfg = Self::paper();
        // 4 m columns and 8 m rows
        cfg.physics.grid = SearchGrid {
            x_min: 460.0,
            x_max: 600.0,
            y_min: 0.0,
            y_max: 200.0,
            n_x: 36,
            n_y: 26,
        };
        cfg.physics.frequencies.count = 9;
        cfg.physics.array.spacing = 10.0;
        cfg.physics.array.count = 21;
        cfg.splits = Splits {
            train: 800,
            val: 100,
            test: 100,
        };
        cfg.network.channels = 4;
        cfg.network.input_scale = 0.3;
        cfg.training.epochs = 25;
        cfg.training.patience = 25;
        cfg.loss.eval_stride = 2;
        cfg.eval.threshold = 0.5;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        PlateauSpec::new(self.plateau.size).map_err(|e| field("plateau", e))?;
        require(
            self.plateau.size <= self.physics.grid.n_x.min(self.physics.grid.n_y),
            "plateau.size",
            "larger than the search grid",
        )?;
        let s = &self.splits;
        require(s.train >= 1, "splits.train", "must be at least 1")?;
        require(s.val >= 1, "splits.val", "must be at least 1")?;
        require(s.test >= 1, "splits.test", "must be at least 1")?;
        let src = &self.sources;
        require(src.min >= 1, "sources.min", "must be at least 1")?;
        require(src.max >= src.min, "sources.max", "must be at least sources.min")?;
        let interior = self.physics.grid.n_x * interior_rows(&self.physics);
        require(src.max <= interior, "sources.max", "more sources than interior grid nodes")?;
        self.network_config().map_err(|e| field("network", e))?;
        let t = &self.training;
        require(t.epochs >= 1, "training.epochs", "must be at least 1")?;
        require(t.batch_size >= 1, "training.batch_size", "must be at least 1")?;
        let a = &t.adam;
        require(
            a.learning_rate > 0.0 && a.learning_rate.is_finite(),
            "training.adam.learning_rate",
            "must be positive",
        )?;
        require(
            (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2),
            "training.adam",
            "betas must lie in [0, 1)",
        )?;
        require(a.epsilon > 0.0, "training.adam.epsilon", "must be positive")?;
        self.loss.weights.validate()?;
        require(self.loss.eval_stride >= 1, "loss.eval_stride", "must be at least 1")?;
        if let Some(o) = self.loss.self_offset {
            require(o > 0.0 && o.is_finite(), "loss.self_offset", "must be positive")?;
        }
        if let Some(fs) = &self.loss.frequencies {
            require(!fs.is_empty(), "loss.frequencies", "must not be empty")?;
            require(
                fs.iter().all(|f| *f > 0.0 && f.is_finite()),
                "loss.frequencies",
                "must be positive",
            )?;
        }
        let e = &self.eval;
        require(
            e.threshold > 0.0 && e.threshold < 1.0,
            "eval.threshold",
            "must lie in (0, 1)",
        )?;
        require(
            e.bin_width > 0.0 && e.bin_max > e.bin_min && e.bin_min >= 0.0,
            "eval.bins",
            "need bin_width > 0 and bin_max > bin_min >= 0",
        )?;
        require(
            e.gaussian_eps.iter().chain(&e.uniform_eps).all(|v| *v >= 0.0 && v.is_finite()),
            "eval.eps",
            "noise levels must be non-negative",
        )?;
        require(
            e.uniform_eps.iter().all(|v| *v <= 1.0),
            "eval.uniform_eps",
            "uniform noise level above 1 can flip the sign",
        )?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Replaces the master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dataset_header(&self) -> DatasetHeader {
        DatasetHeader {
            physics: self.physics,
            plateau: self.plateau,
            splits: self.splits,
            sources: self.sources,
            seed: derive_seed(self.seed, SEED_DATASET),
        }
    }

    pub fn network_config(&self) -> Result<NetworkConfig> {
        let mut cfg = NetworkConfig::new(
            (self.physics.array.count, self.physics.frequencies.count),
            (self.physics.grid.n_x, self.physics.grid.n_y),
            self.network.channels,
            self.network.conv_layers,
            self.network.kernel_size,
        )?;
        cfg.input_scale = self.network.input_scale;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, mode: LossMode) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            loss_mode: mode,
            weights: self.loss.weights,
            patience: self.training.patience,
            seed: derive_seed(self.seed, SEED_TRAIN),
            adam: self.training.adam,
            cross_entropy: self.loss.cross_entropy,
        }
    }

    pub fn noise_seed(&self) -> u64 {
        derive_seed(self.seed, SEED_NOISE)
    }

    /// Frequencies of the physics-loss operators.
    pub fn pi_frequencies(&self) -> Vec<f64> {
        self.loss
            .frequencies
            .clone()
            .unwrap_or_else(|| vec![self.physics.frequencies.center])
    }
}

fn interior_rows(p: &PhysicsConfig) -> usize {
    (0..p.grid.n_y)
        .filter(|&iy| {
            let y = p.grid.y(iy);
            y > 0.0 && y < p.waveguide.depth
        })
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub step: String,
    pub seconds: f64,
}

/// Record of one command invocation, written at the end of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub artifacts: Vec<String>,
    pub timings: Vec<Timing>,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        Ok(RunManifest {
            command: command.into(),
            config_hash: config.hash()?,
            version: env!("CARGO_PKG_VERSION").into(),
            artifacts: Vec::new(),
            timings: Vec::new(),
            finished_unix: 0,
        })
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.finished_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_constants() {
        let d = PhysicsConfig::paper().describe().unwrap();
        assert_eq!(d.propagating_modes, 8);
        assert!((d.wavelength_center - 46.7836).abs() < 1e-3);
        assert!((d.rayleigh_half_wavelength - 23.3918).abs() < 1e-3);
        assert!((d.h_x - 80.0 / 70.0).abs() < 1e-12);
        assert!((d.h_y - 4.0).abs() < 1e-12);
        assert_eq!(d.frequencies.len(), 33);
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        for cfg in [RunConfig::paper(), RunConfig::desk()] {
            cfg.validate().unwrap();
            let text = cfg.to_json().unwrap();
            let back = RunConfig::from_json(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_json().unwrap(), text);
        }
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = RunConfig::paper();
        cfg.physics.grid.n_x = 0;
        match cfg.validate() {
            Err(Error::InvalidParameter { field, .. }) => assert!(field.starts_with("physics.grid"), "{field}"),
            other => panic!("{other:?}"),
        }
        let mut cfg = RunConfig::paper();
        cfg.training.batch_size = 0;
        match cfg.validate() {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "training.batch_size"),
            other => panic!("{other:?}"),
        }
        let mut cfg = RunConfig::paper();
        cfg.network.kernel_size = 4;
        assert!(matches!(cfg.validate(), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::to_value(RunConfig::paper()).unwrap();
        v["bogus"] = 1.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn seed_changes_hash() {
        let a = RunConfig::paper();
        let b = a.clone().with_seed(7);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.dataset_header().seed, b.dataset_header().seed);
    }
}
