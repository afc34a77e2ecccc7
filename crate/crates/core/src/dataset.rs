//! Source sampling, plateau labels, measurement noise and the on-disk dataset
//! container.
//!
//! Container layout (all integers and floats little-endian):
//!
//! ```text
//! "WGSR" | u32 version | u64 header length | JSON header
//! per sample: u32 N_s | N_s x (f64 x, f64 y) | N_r*N_f x (f64 re, f64 im) | N_x*N_y x u8 label
//! ```
//!
//! Samples are stored train split first, then validation, then test.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::PhysicsConfig;
use crate::error::{Error, Result};
use crate::imaging::{Pixel, SearchGrid};
use crate::io::{atomic_write, ByteReader};
use crate::physics::{Point, ResponseTensor, SourceConfig};

pub const DATASET_MAGIC: &[u8; 4] = b"WGSR";
pub const DATASET_VERSION: u32 = 1;

/// Side length of the square plateau drawn around each source pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlateauSpec {
    pub size: usize,
}

impl Default for PlateauSpec {
    fn default() -> Self {
        PlateauSpec { size: 3 }
    }
}

impl PlateauSpec {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("plateau.size", "must be at least 1"));
        }
        Ok(PlateauSpec { size })
    }
}

/// Binary plateau image over the search grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelImage {
    pub n_x: usize,
    pub n_y: usize,
    pub pixels: Vec<u8>,
}

impl LabelImage {
    pub fn zeros(n_x: usize, n_y: usize) -> Self {
        LabelImage {
            n_x,
            n_y,
            pixels: vec![0; n_x * n_y],
        }
    }

    pub fn get(&self, (ix, iy): Pixel) -> u8 {
        self.pixels[ix * self.n_y + iy]
    }

    pub fn count_ones(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }
}

/// Grid pixels of the sources, failing on any source not on a grid node.
pub fn source_pixels(cfg: &SourceConfig, grid: &SearchGrid) -> Result<Vec<Pixel>> {
    cfg.sources
        .iter()
        .map(|s| grid.pixel_at(*s).ok_or(Error::OffGrid { x: s.x, y: s.y }))
        .collect()
}

/// Pixel-wise OR of `size x size` plateaus centered on each pixel, clipped
/// at the grid edges.
pub fn plateau_label(pixels: &[Pixel], grid: &SearchGrid, plateau: PlateauSpec) -> LabelImage {
    let mut label = LabelImage::zeros(grid.n_x, grid.n_y);
    // Even sizes extend one pixel further towards higher indices.
    let lo = (plateau.size - 1) / 2;
    let hi = plateau.size / 2;
    for &(ix, iy) in pixels {
        let x0 = ix.saturating_sub(lo);
        let x1 = (ix + hi).min(grid.n_x - 1);
        let y0 = iy.saturating_sub(lo);
        let y1 = (iy + hi).min(grid.n_y - 1);
        for x in x0..=x1 {
            for y in y0..=y1 {
                label.pixels[x * grid.n_y + y] = 1;
            }
        }
    }
    label
}

pub fn make_label(cfg: &SourceConfig, grid: &SearchGrid, plateau: PlateauSpec) -> Result<LabelImage> {
    Ok(plateau_label(&source_pixels(cfg, grid)?, grid, plateau))
}

/// Label for off-grid sources: each source is attributed to its nearest
/// pixel.
pub fn make_label_nearest(cfg: &SourceConfig, grid: &SearchGrid, plateau: PlateauSpec) -> LabelImage {
    let pixels: Vec<Pixel> = cfg.sources.iter().map(|s| grid.nearest_pixel(*s)).collect();
    plateau_label(&pixels, grid, plateau)
}

/// Draws `N_s ~ U{n_min..=n_max}` distinct grid nodes strictly inside the
/// waveguide.
pub fn sample_sources<R: Rng + ?Sized>(
    rng: &mut R,
    grid: &SearchGrid,
    depth: f64,
    n_min: usize,
    n_max: usize,
) -> Result<SourceConfig> {
    if n_min == 0 || n_min > n_max {
        return Err(Error::invalid(
            "sources.min/max",
            format!("need 1 <= min <= max, got {n_min}..={n_max}"),
        ));
    }
    let rows: Vec<usize> = (0..grid.n_y)
        .filter(|&iy| grid.y(iy) > 0.0 && grid.y(iy) < depth)
        .collect();
    let nodes = rows.len() * grid.n_x;
    if n_max > nodes {
        return Err(Error::invalid(
            "sources.max",
            format!("{n_max} sources requested but the grid has {nodes} interior nodes"),
        ));
    }
    let count = rng.random_range(n_min..=n_max);
    let mut picks = index::sample(rng, nodes, count).into_vec();
    picks.sort_unstable();
    let sources = picks
        .into_iter()
        .map(|k| grid.node((k / rows.len(), rows[k % rows.len()])))
        .collect();
    Ok(SourceConfig::new(sources))
}

/// Minimum Euclidean distance over source pairs; `None` for fewer than two
/// sources.
pub fn min_pairwise_distance(cfg: &SourceConfig) -> Option<f64> {
    let s = &cfg.sources;
    let mut best: Option<f64> = None;
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let d = s[i].distance(&s[j]);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Uniform,
    Gaussian,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::Uniform => "uniform",
            NoiseKind::Gaussian => "gaussian",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub epsilon: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, epsilon: f64, seed: u64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid("noise.epsilon", "must be non-negative"));
        }
        Ok(NoiseSpec { kind, epsilon, seed })
    }

    /// Independent stream for sample `q`.
    pub fn for_sample(&self, q: usize) -> NoiseSpec {
        NoiseSpec {
            seed: derive_seed(self.seed, q as u64),
            ..*self
        }
    }

    pub fn apply(&self, d: &ResponseTensor) -> ResponseTensor {
        match self.kind {
            NoiseKind::Uniform => add_uniform_noise(d, self),
            NoiseKind::Gaussian => add_gaussian_noise(d, self),
        }
    }
}

/// SplitMix64 mixing of a base seed with a stream tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Relative perturbation of real and imaginary parts:
/// `Re(d)(1 + w1) + i Im(d)(1 + w2)`, `w1, w2 ~ eps * U[-1/2, 1/2]`.
pub fn add_uniform_noise(d: &ResponseTensor, spec: &NoiseSpec) -> ResponseTensor {
    if spec.epsilon == 0.0 {
        return d.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = d.clone();
    for z in out.as_mut_slice() {
        let w1 = spec.epsilon * (rng.random::<f64>() - 0.5);
        let w2 = spec.epsilon * (rng.random::<f64>() - 0.5);
        *z = Complex64::new(z.re * (1.0 + w1), z.im * (1.0 + w2));
    }
    out
}

/// Adds circular complex Gaussian noise of per-entry variance
/// `eps * |d^(j)|^2 / N_r` to every frequency column `j`.
pub fn add_gaussian_noise(d: &ResponseTensor, spec: &NoiseSpec) -> ResponseTensor {
    if spec.epsilon == 0.0 {
        return d.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n_r, n_f) = d.dims();
    let mut out = d.clone();
    for j in 0..n_f {
        let power: f64 = (0..n_r).map(|r| d.get(r, j).norm_sqr()).sum::<f64>() / n_r as f64;
        let sigma = (spec.epsilon * power / 2.0).sqrt();
        for r in 0..n_r {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            out.set(r, j, d.get(r, j) + Complex64::new(sigma * re, sigma * im));
        }
    }
    out
}

pub fn snr_db(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "SNR is defined for positive epsilon only"));
    }
    Ok(-10.0 * epsilon.log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Splits {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSampling {
    pub min: usize,
    pub max: usize,
    /// Jitter sources inside their pixel instead of snapping to nodes.
    #[serde(default)]
    pub off_grid: bool,
}

impl Default for SourceSampling {
    fn default() -> Self {
        SourceSampling {
            min: 1,
            max: 6,
            off_grid: false,
        }
    }
}

/// Everything needed to regenerate a dataset; stored as the container's
/// JSON header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub physics: PhysicsConfig,
    pub plateau: PlateauSpec,
    pub splits: Splits,
    pub sources: SourceSampling,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub sources: SourceConfig,
    pub response: ResponseTensor,
    pub label: LabelImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, which: Split) -> &[Sample] {
        let s = self.header.splits;
        match which {
            Split::Train => &self.samples[..s.train],
            Split::Val => &self.samples[s.train..s.train + s.val],
            Split::Test => &self.samples[s.train + s.val..],
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for s in &self.samples {
            buf.extend_from_slice(&(s.sources.len() as u32).to_le_bytes());
            for p in &s.sources.sources {
                buf.extend_from_slice(&p.x.to_le_bytes());
                buf.extend_from_slice(&p.y.to_le_bytes());
            }
            for z in s.response.as_slice() {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
            buf.write_all(&s.label.pixels)?;
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const KIND: &str = "dataset";
        let mut rd = ByteReader::new(bytes, KIND);
        if rd.take(4)? != DATASET_MAGIC {
            return Err(Error::format(KIND, "bad magic"));
        }
        let version = rd.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::format(KIND, format!("unsupported version {version}")));
        }
        let len = rd.u64()? as usize;
        let header: DatasetHeader = serde_json::from_slice(rd.take(len)?)?;
        header.physics.validate()?;
        let grid = header.physics.grid;
        let n_r = header.physics.array.count;
        let n_f = header.physics.frequencies.count;
        let mut samples = Vec::with_capacity(header.splits.total());
        for id in 0..header.splits.total() {
            let n_s = rd.u32()? as usize;
            let sources = (0..n_s)
                .map(|_| Ok(Point::new(rd.f64()?, rd.f64()?)))
                .collect::<Result<Vec<_>>>()?;
            let data = (0..n_r * n_f)
                .map(|_| Ok(Complex64::new(rd.f64()?, rd.f64()?)))
                .collect::<Result<Vec<_>>>()?;
            let pixels = rd.take(grid.len())?.to_vec();
            if pixels.iter().any(|&p| p > 1) {
                return Err(Error::format(KIND, format!("sample {id}: non-binary label")));
            }
            let sample = Sample {
                id,
                sources: SourceConfig::new(sources),
                response: ResponseTensor::from_vec(n_r, n_f, data)?,
                label: LabelImage {
                    n_x: grid.n_x,
                    n_y: grid.n_y,
                    pixels,
                },
            };
            let expected = label_for(&header, &sample.sources)?;
            if expected != sample.label {
                return Err(Error::format(
                    KIND,
                    format!("sample {id}: stored label disagrees with its sources"),
                ));
            }
            samples.push(sample);
        }
        if !rd.is_empty() {
            return Err(Error::format(KIND, "trailing bytes"));
        }
        Ok(Dataset { header, samples })
    }

    pub fn write(&self, path: &Path, overwrite: bool) -> Result<()> {
        if !overwrite && path.exists() {
            return Err(Error::AlreadyExists(path.display().to_string()));
        }
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn label_for(header: &DatasetHeader, sources: &SourceConfig) -> Result<LabelImage> {
    let grid = &header.physics.grid;
    if header.sources.off_grid {
        Ok(make_label_nearest(sources, grid, header.plateau))
    } else {
        make_label(sources, grid, header.plateau)
    }
}

/// Generates every sample from a single seeded stream.
pub fn build_dataset(header: &DatasetHeader) -> Result<Dataset> {
    header.physics.validate()?;
    if header.splits.train == 0 || header.splits.val == 0 || header.splits.test == 0 {
        return Err(Error::invalid("dataset.splits", "every split needs at least one sample"));
    }
    PlateauSpec::new(header.plateau.size)?;
    let model = header.physics.model();
    let grid = header.physics.grid;
    let synth = header.physics.synthesizer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(header.seed);
    let mut samples = Vec::with_capacity(header.splits.total());
    for id in 0..header.splits.total() {
        let mut sources =
            sample_sources(&mut rng, &grid, model.depth, header.sources.min, header.sources.max)?;
        if header.sources.off_grid {
            jitter(&mut rng, &mut sources, &grid, model.depth);
        }
        let response = synth.synthesize(&sources)?;
        let label = label_for(header, &sources)?;
        samples.push(Sample {
            id,
            sources,
            response,
            label,
        });
    }
    Ok(Dataset {
        header: header.clone(),
        samples,
    })
}

fn jitter<R: RngCore>(rng: &mut R, cfg: &mut SourceConfig, grid: &SearchGrid, depth: f64) {
    let (hx, hy) = (grid.h_x(), grid.h_y());
    for p in &mut cfg.sources {
        let dx = (rng.random::<f64>() - 0.5) * hx;
        let dy = (rng.random::<f64>() - 0.5) * hy;
        p.x += dx;
        if p.y + dy > 0.0 && p.y + dy < depth {
            p.y += dy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SearchGrid {
        SearchGrid::new(0.0, 9.0, 0.0, 9.0, 10, 10).unwrap()
    }

    fn at(px: &[Pixel]) -> SourceConfig {
        let g = grid();
        SourceConfig::new(px.iter().map(|&p| g.node(p)).collect())
    }

    #[test]
    fn plateau_counts() {
        let g = grid();
        let p = PlateauSpec::new(3).unwrap();
        assert_eq!(make_label(&at(&[(4, 4)]), &g, p).unwrap().count_ones(), 9);
        assert_eq!(make_label(&at(&[(0, 0)]), &g, p).unwrap().count_ones(), 4);
        assert_eq!(make_label(&at(&[(4, 4), (6, 4)]), &g, p).unwrap().count_ones(), 15);
        assert_eq!(
            make_label(&at(&[(4, 4), (4, 4)]), &g, p).unwrap(),
            make_label(&at(&[(4, 4)]), &g, p).unwrap()
        );
    }

    #[test]
    fn off_grid_source_is_rejected() {
        let cfg = SourceConfig::new(vec![Point::new(4.5, 4.0)]);
        assert!(matches!(
            make_label(&cfg, &grid(), PlateauSpec::default()),
            Err(Error::OffGrid { .. })
        ));
    }

    #[test]
    fn sampled_sources_sit_on_distinct_interior_nodes() {
        let g = SearchGrid::new(490.0, 570.0, 0.0, 200.0, 36, 26).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let cfg = sample_sources(&mut rng, &g, 200.0, 1, 6).unwrap();
            assert!((1..=6).contains(&cfg.len()));
            let mut px = source_pixels(&cfg, &g).unwrap();
            assert!(px.iter().all(|&(_, iy)| iy > 0 && iy < 25));
            px.sort_unstable();
            px.dedup();
            assert_eq!(px.len(), cfg.len());
        }
        let one = sample_sources(&mut rng, &g, 200.0, 1, 1).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn sample_sources_rejects_impossible_counts() {
        let g = SearchGrid::new(0.0, 1.0, 0.0, 2.0, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Only the middle row is interior: two nodes.
        assert!(sample_sources(&mut rng, &g, 2.0, 1, 3).is_err());
        assert!(sample_sources(&mut rng, &g, 2.0, 3, 2).is_err());
        assert!(sample_sources(&mut rng, &g, 2.0, 0, 2).is_err());
        assert_eq!(sample_sources(&mut rng, &g, 2.0, 2, 2).unwrap().len(), 2);
    }

    #[test]
    fn pairwise_distances() {
        let cfg = |pts: &[(f64, f64)]| {
            SourceConfig::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect())
        };
        assert_eq!(min_pairwise_distance(&cfg(&[(0.0, 0.0), (3.0, 4.0)])), Some(5.0));
        assert_eq!(min_pairwise_distance(&cfg(&[(1.0, 1.0)])), None);
        assert_eq!(
            min_pairwise_distance(&cfg(&[(0.0, 0.0), (0.0, 10.0), (0.0, 13.0)])),
            Some(3.0)
        );
    }

    #[test]
    fn snr_values() {
        assert_eq!(snr_db(1.0).unwrap(), 0.0);
        assert!((snr_db(1e-4).unwrap() - 40.0).abs() < 1e-12);
        assert!((snr_db(10.0).unwrap() + 10.0).abs() < 1e-12);
        assert!(snr_db(0.0).is_err());
        assert!(snr_db(-1.0).is_err());
    }

    fn tensor() -> ResponseTensor {
        let data = (0..12)
            .map(|i| Complex64::new(1.0 + i as f64, 0.5 - i as f64))
            .collect();
        ResponseTensor::from_vec(4, 3, data).unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let d = tensor();
        for kind in [NoiseKind::Uniform, NoiseKind::Gaussian] {
            assert_eq!(NoiseSpec::new(kind, 0.0, 3).unwrap().apply(&d), d);
        }
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let d = tensor();
        for kind in [NoiseKind::Uniform, NoiseKind::Gaussian] {
            let spec = NoiseSpec::new(kind, 0.3, 11).unwrap();
            assert_eq!(spec.apply(&d), spec.apply(&d));
            assert_ne!(spec.apply(&d), spec.for_sample(1).apply(&d));
        }
    }

    #[test]
    fn uniform_noise_extremes() {
        // w1 = +eps/2, w2 = -eps/2 applied by hand through the same formula.
        let eps = 0.2;
        let z = Complex64::new(1.0, 1.0);
        let (w1, w2) = (eps / 2.0, -eps / 2.0);
        let out = Complex64::new(z.re * (1.0 + w1), z.im * (1.0 + w2));
        assert_eq!(out, Complex64::new(1.0 + eps / 2.0, 1.0 - eps / 2.0));
        // And every sampled perturbation stays within those extremes.
        let d = tensor();
        let noisy = add_uniform_noise(&d, &NoiseSpec::new(NoiseKind::Uniform, eps, 5).unwrap());
        for (a, b) in d.as_slice().iter().zip(noisy.as_slice()) {
            assert!(((b.re / a.re) - 1.0).abs() <= eps / 2.0 + 1e-15);
            assert!(((b.im / a.im) - 1.0).abs() <= eps / 2.0 + 1e-15);
        }
    }

    #[test]
    fn uniform_noise_moments() {
        let n = 100_000;
        let d = ResponseTensor::from_vec(n, 1, vec![Complex64::new(1.0, 1.0); n]).unwrap();
        let eps = 0.4;
        let noisy = add_uniform_noise(&d, &NoiseSpec::new(NoiseKind::Uniform, eps, 99).unwrap());
        let rel: Vec<f64> = noisy.as_slice().iter().map(|z| z.re - 1.0).collect();
        let mean = rel.iter().sum::<f64>() / n as f64;
        let var = rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target_var = eps * eps / 12.0;
        // Standard error of the mean and of the sample variance of U[-a, a].
        let se_mean = (target_var / n as f64).sqrt();
        let fourth = eps.powi(4) / 80.0;
        let se_var = ((fourth - target_var * target_var) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - target_var).abs() < 3.0 * se_var, "var {var}");
        assert!(rel.iter().all(|r| r.abs() <= eps / 2.0));
    }

    #[test]
    fn gaussian_noise_power() {
        let d = tensor();
        let eps = 0.5;
        let draws = 10_000;
        for j in 0..3 {
            let signal: f64 = d.column(j).iter().map(|z| z.norm_sqr()).sum();
            let mut powers = Vec::with_capacity(draws);
            for s in 0..draws {
                let spec = NoiseSpec::new(NoiseKind::Gaussian, eps, s as u64).unwrap();
                let noisy = add_gaussian_noise(&d, &spec);
                let p: f64 = (0..4).map(|r| (noisy.get(r, j) - d.get(r, j)).norm_sqr()).sum();
                powers.push(p);
            }
            let mean = powers.iter().sum::<f64>() / draws as f64;
            let var = powers.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let expected = eps * signal;
            assert!(
                (mean - expected).abs() < 3.0 * (var / draws as f64).sqrt(),
                "column {j}: {mean} vs {expected}"
            );
        }
    }
}
