//! Analytic wave physics for a homogeneous Dirichlet waveguide.
//!
//! The vertical eigenproblem `Y'' + mu Y = 0`, `Y(0) = Y(D) = 0` has the closed
//! form eigenvalues `mu_n = (n pi / D)^2`. Each vertical mode travels
//! horizontally with wavenumber `beta_n = sqrt(k^2 - mu_n)`; modes with
//! `mu_n > k^2` are evanescent and `beta_n` is taken on the branch with positive
//! imaginary part so that `exp(i beta_n |x - x_s|)` decays with range.
//!
//! The Green's function is the truncated modal series
//!
//! ```text
//! G(x, x_s; w) = sqrt(2/D) * sum_n (1/beta_n) exp(i beta_n |x - x_s|) sin(sqrt(mu_n) y) sin(sqrt(mu_n) y_s)
//! ```
//!
//! and the array response of a source configuration is the superposition of
//! the Green's functions of its sources.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal offsets below this are treated as zero.
pub const MIN_OFFSET: f64 = 1e-9;

/// `|k^2 - mu_n|` below this is a cut-on degeneracy.
pub const CUT_ON_TOLERANCE: f64 = 1e-12;

/// Exponent `E` of the default truncation rule: the first discarded evanescent
/// term is below `exp(-E)` at the smallest horizontal offset of interest.
pub const EVANESCENT_DECAY_EXPONENT: f64 = 40.0;

/// Upper bound on an automatically chosen truncation.
pub const MAX_AUTO_MODES: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Dirichlet,
}

/// Homogeneous waveguide of constant sound speed and depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveguideModel {
    /// Sound speed (m/s).
    pub c0: f64,
    /// Depth (m).
    pub depth: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl WaveguideModel {
    pub fn new(c0: f64, depth: f64) -> Result<Self> {
        let model = WaveguideModel {
            c0,
            depth,
            boundary: Boundary::Dirichlet,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::invalid("waveguide.c0", "sound speed must be positive"));
        }
        if !(self.depth > 0.0 && self.depth.is_finite()) {
            return Err(Error::invalid("waveguide.depth", "depth must be positive"));
        }
        Ok(())
    }

    pub fn wavenumber(&self, frequency_hz: f64) -> f64 {
        2.0 * PI * frequency_hz / self.c0
    }

    pub fn wavelength(&self, frequency_hz: f64) -> f64 {
        self.c0 / frequency_hz
    }

    fn contains_depth(&self, y: f64) -> bool {
        let slack = 1e-9 * self.depth;
        y >= -slack && y <= self.depth + slack
    }
}

/// Uniform frequency sampling of `[f_c - B/2, f_c + B/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    center: f64,
    bandwidth: f64,
    frequencies: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(center: f64, bandwidth: f64, count: usize) -> Result<Self> {
        if !(center > 0.0 && center.is_finite()) {
            return Err(Error::invalid("frequencies.center", "must be positive"));
        }
        if !(bandwidth >= 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid("frequencies.bandwidth", "must be non-negative"));
        }
        if count == 0 {
            return Err(Error::invalid("frequencies.count", "need at least one frequency"));
        }
        if count > 1 && bandwidth == 0.0 {
            return Err(Error::invalid(
                "frequencies.bandwidth",
                "several frequencies need a positive bandwidth",
            ));
        }
        if center - bandwidth / 2.0 <= 0.0 {
            return Err(Error::invalid(
                "frequencies.bandwidth",
                "band must stay above 0 Hz",
            ));
        }
        let frequencies = if count == 1 {
            vec![center]
        } else {
            let lo = center - bandwidth / 2.0;
            let step = bandwidth / (count - 1) as f64;
            (0..count).map(|j| lo + j as f64 * step).collect()
        };
        Ok(FrequencyGrid {
            center,
            bandwidth,
            frequencies,
        })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.frequencies.iter().map(|f| 2.0 * PI * f).collect()
    }

    pub fn wavenumbers(&self, model: &WaveguideModel) -> Vec<f64> {
        self.frequencies.iter().map(|&f| model.wavenumber(f)).collect()
    }
}

/// `mu_n = n^2 pi^2 / D^2` for `n = 1..=n_modes`.
pub fn vertical_modes(depth: f64, n_modes: usize) -> Result<Vec<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::invalid("depth", "must be positive"));
    }
    if n_modes == 0 {
        return Err(Error::invalid("n_modes", "need at least one mode"));
    }
    Ok((1..=n_modes).map(|n| mode_eigenvalue(depth, n)).collect())
}

fn mode_eigenvalue(depth: f64, n: usize) -> f64 {
    let s = n as f64 * PI / depth;
    s * s
}

/// Horizontal wavenumbers for the given vertical eigenvalues, plus the number
/// of propagating modes among them.
pub fn horizontal_wavenumbers(mu: &[f64], k: f64) -> Result<(Vec<Complex64>, usize)> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::invalid("k", "wavenumber must be positive"));
    }
    if mu.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("mu", "eigenvalues must be strictly increasing"));
    }
    let k2 = k * k;
    let mut propagating = 0;
    let beta = mu
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let gap = k2 - m;
            if gap.abs() < CUT_ON_TOLERANCE {
                return Err(Error::CutOnDegeneracy { mode: i + 1, gap: gap.abs() });
            }
            if gap > 0.0 {
                propagating += 1;
                Ok(Complex64::new(gap.sqrt(), 0.0))
            } else {
                Ok(Complex64::new(0.0, (-gap).sqrt()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((beta, propagating))
}

/// `M = max{n : mu_n < k^2}`, checking every mode up to the first evanescent
/// one for cut-on degeneracy.
pub fn propagating_mode_count(depth: f64, k: f64) -> Result<usize> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::invalid("k", "wavenumber must be positive"));
    }
    let k2 = k * k;
    let mut n = 1;
    loop {
        let gap = k2 - mode_eigenvalue(depth, n);
        if gap.abs() < CUT_ON_TOLERANCE {
            return Err(Error::CutOnDegeneracy { mode: n, gap: gap.abs() });
        }
        if gap < 0.0 {
            return Ok(n - 1);
        }
        n += 1;
    }
}

/// Truncation `M + ceil(E / (Im(beta_{M+1}) * min_offset))`.
pub fn default_mode_count(model: &WaveguideModel, k: f64, min_offset: f64) -> Result<usize> {
    if !(min_offset > 0.0 && min_offset.is_finite()) {
        return Err(Error::invalid(
            "min_offset",
            "automatic truncation needs a positive horizontal offset",
        ));
    }
    let m = propagating_mode_count(model.depth, k)?;
    let decay = (mode_eigenvalue(model.depth, m + 1) - k * k).sqrt();
    let extra = (EVANESCENT_DECAY_EXPONENT / (decay * min_offset)).ceil();
    let total = m as f64 + extra;
    if total > MAX_AUTO_MODES as f64 {
        return Err(Error::invalid(
            "n_modes",
            format!(
                "offset {min_offset:e} m needs {total} modes; give an explicit truncation instead"
            ),
        ));
    }
    Ok(m + extra as usize)
}

/// Truncated modal basis at one wavenumber.
#[derive(Clone, Debug)]
pub struct ModalBasis {
    depth: f64,
    k: f64,
    mu: Vec<f64>,
    sqrt_mu: Vec<f64>,
    beta: Vec<Complex64>,
    propagating: usize,
    norm: f64,
}

impl ModalBasis {
    /// Basis with an explicit number of modes; must include every
    /// propagating mode.
    pub fn new(model: &WaveguideModel, k: f64, n_modes: usize) -> Result<Self> {
        model.validate()?;
        let m = propagating_mode_count(model.depth, k)?;
        if n_modes < m.max(1) {
            return Err(Error::invalid(
                "n_modes",
                format!("{n_modes} modes cannot hold the {m} propagating modes"),
            ));
        }
        let mu = vertical_modes(model.depth, n_modes)?;
        let (beta, propagating) = horizontal_wavenumbers(&mu, k)?;
        debug_assert_eq!(propagating, m);
        Ok(ModalBasis {
            depth: model.depth,
            k,
            sqrt_mu: mu.iter().map(|m| m.sqrt()).collect(),
            mu,
            beta,
            propagating,
            norm: (2.0 / model.depth).sqrt(),
        })
    }

    /// Basis truncated by the default rule for horizontal offsets of at
    /// least `min_offset`.
    pub fn for_min_offset(model: &WaveguideModel, k: f64, min_offset: f64) -> Result<Self> {
        let n = default_mode_count(model, k, min_offset)?;
        Self::new(model, k, n)
    }

    pub fn with_truncation(model: &WaveguideModel, k: f64, truncation: Truncation) -> Result<Self> {
        match truncation {
            Truncation::Auto { min_offset } => Self::for_min_offset(model, k, min_offset),
            Truncation::Fixed(n) => Self::new(model, k, n),
        }
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn n_modes(&self) -> usize {
        self.mu.len()
    }

    pub fn propagating(&self) -> usize {
        self.propagating
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn beta(&self) -> &[Complex64] {
        &self.beta
    }

    /// `sin(sqrt(mu_n) y)` for every mode.
    pub fn mode_shapes(&self, y: f64) -> Vec<f64> {
        self.sqrt_mu.iter().map(|s| (s * y).sin()).collect()
    }

    /// `exp(i beta_n dx) / beta_n` for every mode.
    pub fn propagators(&self, dx: f64) -> Vec<Complex64> {
        self.beta
            .iter()
            .map(|b| (Complex64::i() * b * dx).exp() / b)
            .collect()
    }

    /// Modal sum from precomputed propagators and mode shapes.
    #[inline]
    pub fn combine(&self, propagators: &[Complex64], shapes: &[f64], source_shapes: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for ((p, a), b) in propagators.iter().zip(shapes).zip(source_shapes) {
            acc += p * (a * b);
        }
        acc * self.norm
    }
}

/// How a modal series is cut off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Default rule for horizontal offsets of at least `min_offset`.
    Auto { min_offset: f64 },
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn check_evaluation(model: &WaveguideModel, x: Point, xs: Point) -> Result<f64> {
    for p in [x, xs] {
        if !model.contains_depth(p.y) || !p.x.is_finite() {
            return Err(Error::OutsideWaveguide {
                x: p.x,
                y: p.y,
                depth: model.depth,
            });
        }
    }
    let dx = (x.x - xs.x).abs();
    if dx < MIN_OFFSET && (x.y - xs.y).abs() < MIN_OFFSET {
        return Err(Error::SingularEvaluation { x: x.x, y: x.y });
    }
    Ok(dx)
}

/// Truncated modal Green's function between field point `x` and source `xs`.
///
/// The series is always evaluated with the finite truncation of `basis`, so
/// points sharing a horizontal coordinate are accepted as long as they do not
/// coincide.
pub fn greens_function(
    model: &WaveguideModel,
    basis: &ModalBasis,
    x: Point,
    xs: Point,
) -> Result<Complex64> {
    if basis.depth != model.depth {
        return Err(Error::invalid("basis", "modal basis built for another depth"));
    }
    let dx = check_evaluation(model, x, xs)?;
    Ok(basis.combine(
        &basis.propagators(dx),
        &basis.mode_shapes(x.y),
        &basis.mode_shapes(xs.y),
    ))
}

/// Vertical receiver array at a fixed horizontal position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub x: f64,
    pub receiver_y: Vec<f64>,
}

impl ArrayGeometry {
    /// `count` receivers at depths `first, first + spacing, ...`.
    pub fn uniform(x: f64, first: f64, spacing: f64, count: usize) -> Self {
        ArrayGeometry {
            x,
            receiver_y: (0..count).map(|r| first + r as f64 * spacing).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.receiver_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receiver_y.is_empty()
    }

    pub fn validate(&self, model: &WaveguideModel) -> Result<()> {
        if self.receiver_y.is_empty() {
            return Err(Error::invalid("array.receivers", "need at least one receiver"));
        }
        if !self.x.is_finite() {
            return Err(Error::invalid("array.x", "must be finite"));
        }
        if let Some(y) = self.receiver_y.iter().find(|&&y| !model.contains_depth(y)) {
            return Err(Error::invalid(
                "array.receivers",
                format!("receiver depth {y} outside [0, {}]", model.depth),
            ));
        }
        Ok(())
    }

    pub fn receiver(&self, r: usize) -> Point {
        Point::new(self.x, self.receiver_y[r])
    }
}

/// Positions of the point sources of one scenario.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub sources: Vec<Point>,
}

impl SourceConfig {
    pub fn new(sources: Vec<Point>) -> Self {
        SourceConfig { sources }
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Every source must lie strictly between the waveguide boundaries.
    pub fn validate(&self, model: &WaveguideModel) -> Result<()> {
        for (index, s) in self.sources.iter().enumerate() {
            if !(s.y > 0.0 && s.y < model.depth && s.x.is_finite()) {
                return Err(Error::Source {
                    index,
                    source: Box::new(Error::OutsideWaveguide {
                        x: s.x,
                        y: s.y,
                        depth: model.depth,
                    }),
                });
            }
        }
        Ok(())
    }
}

/// Complex array data, receivers by frequencies, stored receiver-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseTensor {
    n_r: usize,
    n_f: usize,
    data: Vec<Complex64>,
}

impl ResponseTensor {
    pub fn zeros(n_r: usize, n_f: usize) -> Self {
        ResponseTensor {
            n_r,
            n_f,
            data: vec![Complex64::new(0.0, 0.0); n_r * n_f],
        }
    }

    pub fn from_vec(n_r: usize, n_f: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n_r * n_f {
            return Err(Error::shape("response tensor", n_r * n_f, data.len()));
        }
        Ok(ResponseTensor { n_r, n_f, data })
    }

    pub fn n_receivers(&self) -> usize {
        self.n_r
    }

    pub fn n_frequencies(&self) -> usize {
        self.n_f
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_r, self.n_f)
    }

    pub fn get(&self, r: usize, j: usize) -> Complex64 {
        self.data[r * self.n_f + j]
    }

    pub fn set(&mut self, r: usize, j: usize, value: Complex64) {
        self.data[r * self.n_f + j] = value;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Column `j`: all receivers at one frequency.
    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.n_r).map(|r| self.get(r, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        ResponseTensor {
            n_r: self.n_r,
            n_f: self.n_f,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn try_add(&self, other: &ResponseTensor) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                "response addition",
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        Ok(ResponseTensor {
            n_r: self.n_r,
            n_f: self.n_f,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }
}

/// Precomputed per-frequency bases and receiver mode shapes for repeated
/// response synthesis over one geometry.
#[derive(Clone, Debug)]
pub struct ResponseSynthesizer {
    model: WaveguideModel,
    array: ArrayGeometry,
    bases: Vec<ModalBasis>,
    // [frequency][receiver][mode]
    receiver_shapes: Vec<Vec<Vec<f64>>>,
}

impl ResponseSynthesizer {
    pub fn new(
        model: &WaveguideModel,
        frequencies: &FrequencyGrid,
        array: &ArrayGeometry,
        truncation: Truncation,
    ) -> Result<Self> {
        model.validate()?;
        array.validate(model)?;
        let bases = frequencies
            .wavenumbers(model)
            .into_iter()
            .map(|k| ModalBasis::with_truncation(model, k, truncation))
            .collect::<Result<Vec<_>>>()?;
        let receiver_shapes = bases
            .iter()
            .map(|b| array.receiver_y.iter().map(|&y| b.mode_shapes(y)).collect())
            .collect();
        Ok(ResponseSynthesizer {
            model: *model,
            array: array.clone(),
            bases,
            receiver_shapes,
        })
    }

    pub fn bases(&self) -> &[ModalBasis] {
        &self.bases
    }

    /// Entry `(r, j)` is `sum_i G(x_r, x_i; w_j)`, accumulated in source order.
    pub fn synthesize(&self, cfg: &SourceConfig) -> Result<ResponseTensor> {
        let n_r = self.array.len();
        let n_f = self.bases.len();
        let mut out = ResponseTensor::zeros(n_r, n_f);
        for (index, &src) in cfg.sources.iter().enumerate() {
            let attach = |e| Error::Source {
                index,
                source: Box::new(e),
            };
            for r in 0..n_r {
                check_evaluation(&self.model, self.array.receiver(r), src).map_err(attach)?;
            }
            let dx = (self.array.x - src.x).abs();
            for (j, basis) in self.bases.iter().enumerate() {
                let prop = basis.propagators(dx);
                let src_shapes = basis.mode_shapes(src.y);
                for r in 0..n_r {
                    let g = basis.combine(&prop, &self.receiver_shapes[j][r], &src_shapes);
                    out.data[r * n_f + j] += g;
                }
            }
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("synthesized response".into()));
        }
        Ok(out)
    }
}

/// Array response of `cfg`, truncated for the closest source-array offset.
pub fn synthesize_response(
    model: &WaveguideModel,
    frequencies: &FrequencyGrid,
    array: &ArrayGeometry,
    cfg: &SourceConfig,
) -> Result<ResponseTensor> {
    if cfg.is_empty() {
        return Ok(ResponseTensor::zeros(array.len(), frequencies.len()));
    }
    let min_offset = cfg
        .sources
        .iter()
        .map(|s| (s.x - array.x).abs())
        .fold(f64::INFINITY, f64::min);
    if min_offset < MIN_OFFSET {
        return Err(Error::invalid(
            "sources",
            "a source shares the array's horizontal position; pass an explicit truncation",
        ));
    }
    ResponseSynthesizer::new(model, frequencies, array, Truncation::Auto { min_offset })?
        .synthesize(cfg)
}
