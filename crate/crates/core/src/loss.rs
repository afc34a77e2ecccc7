//! Training objectives: pixel-wise cross-entropy averaged over a batch, the
//! physics-informed field discrepancy, and their weighted combination.
//!
//! The physics term treats the label `I` and the prediction `P` as discretized
//! source distributions and compares the fields they radiate on a set of
//! evaluation points through a precomputed Green's operator `A`:
//!
//! ```text
//! r_q  = A (vec(I_q) - vec(P_q))
//! l_PI = sqrt(sum_q |r_q|^2) / (N_batch * N_x * N_y)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LabelImage;
use crate::error::{Error, Result};
use crate::imaging::SearchGrid;
use crate::io::{atomic_write, ByteReader};
use crate::nn::ProbabilityImage;
use crate::physics::{default_mode_count, ModalBasis, Point, WaveguideModel};

pub const OPERATOR_MAGIC: &[u8; 4] = b"WGOP";
pub const OPERATOR_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossEntropyVariant {
    /// `-(I log P + (1 - I) log(1 - P))`.
    #[default]
    TwoSided,
    /// `-I log P` only.
    OneSided,
}

fn check_pair(pred: &ProbabilityImage, label: &LabelImage) -> Result<()> {
    if (pred.n_x, pred.n_y) != (label.n_x, label.n_y) || pred.values.len() != label.pixels.len() {
        return Err(Error::shape(
            "prediction/label",
            format!("{}x{}", label.n_x, label.n_y),
            format!("{}x{}", pred.n_x, pred.n_y),
        ));
    }
    Ok(())
}

fn check_batch(preds: &[ProbabilityImage], labels: &[LabelImage]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::invalid("batch", "empty batch"));
    }
    if preds.len() != labels.len() {
        return Err(Error::shape("batch length", labels.len(), preds.len()));
    }
    preds.iter().zip(labels).try_for_each(|(p, l)| check_pair(p, l))
}

pub fn cross_entropy(pred: &ProbabilityImage, label: &LabelImage) -> Result<f64> {
    cross_entropy_with(pred, label, CrossEntropyVariant::TwoSided)
}

/// Mean over pixels of the per-pixel cross-entropy.
pub fn cross_entropy_with(
    pred: &ProbabilityImage,
    label: &LabelImage,
    variant: CrossEntropyVariant,
) -> Result<f64> {
    check_pair(pred, label)?;
    let n = pred.values.len() as f64;
    let sum: f64 = pred
        .values
        .iter()
        .zip(&label.pixels)
        .map(|(&p, &l)| {
            let l = l as f64;
            match variant {
                CrossEntropyVariant::TwoSided => -(l * p.ln() + (1.0 - l) * (1.0 - p).ln()),
                CrossEntropyVariant::OneSided => -(l * p.ln()),
            }
        })
        .sum();
    Ok(sum / n)
}

/// Derivative of [`cross_entropy_with`] with respect to each prediction
/// pixel.
pub fn cross_entropy_grad(
    pred: &ProbabilityImage,
    label: &LabelImage,
    variant: CrossEntropyVariant,
) -> Result<Vec<f64>> {
    check_pair(pred, label)?;
    let n = pred.values.len() as f64;
    Ok(pred
        .values
        .iter()
        .zip(&label.pixels)
        .map(|(&p, &l)| {
            let l = l as f64;
            match variant {
                CrossEntropyVariant::TwoSided => (-l / p + (1.0 - l) / (1.0 - p)) / n,
                CrossEntropyVariant::OneSided => -l / p / n,
            }
        })
        .collect())
}

/// Batch mean of the cross-entropy.
pub fn nll_loss(
    preds: &[ProbabilityImage],
    labels: &[LabelImage],
    variant: CrossEntropyVariant,
) -> Result<f64> {
    check_batch(preds, labels)?;
    let mut sum = 0.0;
    for (p, l) in preds.iter().zip(labels) {
        sum += cross_entropy_with(p, l, variant)?;
    }
    Ok(sum / preds.len() as f64)
}

pub fn nll_loss_output_grad(
    preds: &[ProbabilityImage],
    labels: &[LabelImage],
    variant: CrossEntropyVariant,
) -> Result<Vec<Vec<f64>>> {
    check_batch(preds, labels)?;
    let scale = 1.0 / preds.len() as f64;
    preds
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let mut g = cross_entropy_grad(p, l, variant)?;
            g.iter_mut().for_each(|v| *v *= scale);
            Ok(g)
        })
        .collect()
}

/// Identifies a field operator; also the JSON header of its cache file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub waveguide: WaveguideModel,
    pub frequency_hz: f64,
    pub grid: SearchGrid,
    pub eval_stride: usize,
    /// Horizontal offset used for the self-interaction entries.
    pub self_offset: f64,
    pub n_modes: usize,
}

impl OperatorSpec {
    /// Fills in the defaults: half-pixel self offset and the modal truncation
    /// rule applied at that offset.
    pub fn new(
        model: &WaveguideModel,
        grid: &SearchGrid,
        frequency_hz: f64,
        eval_stride: usize,
        self_offset: Option<f64>,
        n_modes: Option<usize>,
    ) -> Result<Self> {
        let self_offset = match self_offset {
            Some(v) => v,
            None => {
                let h = if grid.h_x() > 0.0 { grid.h_x() } else { grid.h_y() };
                h / 2.0
            }
        };
        if !(self_offset > 0.0 && self_offset.is_finite()) {
            return Err(Error::invalid(
                "loss.self_offset",
                "self-interaction offset must be positive",
            ));
        }
        let n_modes = match n_modes {
            Some(n) => n,
            None => default_mode_count(model, model.wavenumber(frequency_hz), self_offset)?,
        };
        Ok(OperatorSpec {
            waveguide: *model,
            frequency_hz,
            grid: *grid,
            eval_stride,
            self_offset,
            n_modes,
        })
    }

    /// Content hash used as the cache key.
    pub fn cache_key(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().take(16).map(|b| format!("{b:02x}")).collect())
    }

    pub fn build(&self) -> Result<FieldOperator> {
        let basis = ModalBasis::new(&self.waveguide, self.waveguide.wavenumber(self.frequency_hz), self.n_modes)?;
        build_field_operator(&self.waveguide, &basis, &self.grid, self.eval_stride, self.self_offset)
    }
}

/// Dense complex matrix from pixel sources to evaluation-point fields.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOperator {
    pub grid: SearchGrid,
    pub omega: f64,
    pub eval_stride: usize,
    pub self_offset: f64,
    /// Row-major pixel index of every evaluation point.
    pub eval_pixels: Vec<usize>,
    /// `eval_pixels.len() x grid.len()`, row-major.
    pub matrix: Vec<Complex64>,
}

impl FieldOperator {
    pub fn rows(&self) -> usize {
        self.eval_pixels.len()
    }

    pub fn cols(&self) -> usize {
        self.grid.len()
    }

    pub fn get(&self, m: usize, j: usize) -> Complex64 {
        self.matrix[m * self.cols() + j]
    }

    /// `A v` for a real pixel vector.
    pub fn apply(&self, v: &[f64]) -> Vec<Complex64> {
        let cols = self.cols();
        self.matrix
            .chunks_exact(cols)
            .map(|row| {
                let (mut re, mut im) = (0.0, 0.0);
                for (a, x) in row.iter().zip(v) {
                    re += a.re * x;
                    im += a.im * x;
                }
                Complex64::new(re, im)
            })
            .collect()
    }

    /// `Re(A^H r)`.
    pub fn adjoint_real(&self, r: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for (row, rm) in self.matrix.chunks_exact(self.cols()).zip(r) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.re * rm.re + a.im * rm.im;
            }
        }
        out
    }

    fn to_bytes(&self, spec: &OperatorSpec) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(spec)?;
        let mut buf = Vec::with_capacity(32 + header.len() + 16 * self.matrix.len());
        buf.extend_from_slice(OPERATOR_MAGIC);
        buf.extend_from_slice(&OPERATOR_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.cols() as u64).to_le_bytes());
        for z in &self.matrix {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        Ok(buf)
    }

    fn from_bytes(bytes: &[u8]) -> Result<(OperatorSpec, FieldOperator)> {
        const KIND: &str = "operator";
        let mut rd = ByteReader::new(bytes, KIND);
        if rd.take(4)? != OPERATOR_MAGIC {
            return Err(Error::format(KIND, "bad magic"));
        }
        let version = rd.u32()?;
        if version != OPERATOR_VERSION {
            return Err(Error::format(KIND, format!("unsupported version {version}")));
        }
        let len = rd.u64()? as usize;
        let spec: OperatorSpec = serde_json::from_slice(rd.take(len)?)?;
        let rows = rd.u64()? as usize;
        let cols = rd.u64()? as usize;
        let eval_pixels = eval_pixels(&spec.grid, spec.eval_stride)?;
        if rows != eval_pixels.len() || cols != spec.grid.len() {
            return Err(Error::format(KIND, "matrix dimensions disagree with header"));
        }
        let matrix = (0..rows * cols)
            .map(|_| Ok(Complex64::new(rd.f64()?, rd.f64()?)))
            .collect::<Result<Vec<_>>>()?;
        if !rd.is_empty() {
            return Err(Error::format(KIND, "trailing bytes"));
        }
        let op = FieldOperator {
            grid: spec.grid,
            omega: 2.0 * std::f64::consts::PI * spec.frequency_hz,
            eval_stride: spec.eval_stride,
            self_offset: spec.self_offset,
            eval_pixels,
            matrix,
        };
        Ok((spec, op))
    }

    pub fn save(&self, spec: &OperatorSpec, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes(spec)?)
    }

    pub fn load(path: &Path) -> Result<(OperatorSpec, FieldOperator)> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads `spec` from `cache_dir` if a file with its content hash exists,
    /// otherwise builds it and stores it there.
    pub fn load_or_build(spec: &OperatorSpec, cache_dir: Option<&Path>) -> Result<FieldOperator> {
        let Some(dir) = cache_dir else {
            return spec.build();
        };
        let path = operator_cache_path(dir, spec)?;
        if path.exists() {
            let (stored, op) = Self::load(&path)?;
            if &stored == spec {
                return Ok(op);
            }
        }
        let op = spec.build()?;
        op.save(spec, &path)?;
        Ok(op)
    }
}

pub fn operator_cache_path(dir: &Path, spec: &OperatorSpec) -> Result<PathBuf> {
    Ok(dir.join(format!("op-{}.wgop", spec.cache_key()?)))
}

fn eval_pixels(grid: &SearchGrid, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::invalid("loss.eval_stride", "must be at least 1"));
    }
    let mut out = Vec::new();
    for ix in (0..grid.n_x).step_by(stride) {
        for iy in (0..grid.n_y).step_by(stride) {
            out.push(grid.index((ix, iy)));
        }
    }
    Ok(out)
}

/// `A[m, j] = G(x_m, y_j)` between evaluation point `m` (every `stride`-th
/// grid node along both axes) and pixel center `j`. When the two coincide the
/// Green's function is taken at horizontal distance `self_offset` instead.
pub fn build_field_operator(
    model: &WaveguideModel,
    basis: &ModalBasis,
    grid: &SearchGrid,
    eval_stride: usize,
    self_offset: f64,
) -> Result<FieldOperator> {
    grid.validate(Some(model))?;
    if basis.depth() != model.depth {
        return Err(Error::invalid("basis", "modal basis built for another depth"));
    }
    if !(self_offset > 0.0) {
        return Err(Error::invalid("loss.self_offset", "must be positive"));
    }
    let eval = eval_pixels(grid, eval_stride)?;
    let row_shapes: Vec<Vec<f64>> = (0..grid.n_y).map(|iy| basis.mode_shapes(grid.y(iy))).collect();
    // Propagators by column distance |ix_m - ix_j|.
    let props: Vec<_> = (0..grid.n_x)
        .map(|d| basis.propagators(d as f64 * grid.h_x()))
        .collect();
    let self_prop = basis.propagators(self_offset);
    let cols = grid.len();
    let mut matrix = Vec::with_capacity(eval.len() * cols);
    for &m in &eval {
        let (mx, my) = grid.pixel(m);
        for j in 0..cols {
            let (jx, jy) = grid.pixel(j);
            let prop = if j == m {
                &self_prop
            } else {
                &props[mx.abs_diff(jx)]
            };
            matrix.push(basis.combine(prop, &row_shapes[my], &row_shapes[jy]));
        }
    }
    if matrix.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite("field operator".into()));
    }
    Ok(FieldOperator {
        grid: *grid,
        omega: basis.k() * model.c0,
        eval_stride,
        self_offset,
        eval_pixels: eval,
        matrix,
    })
}

/// Evaluation point of row `m` as a physical point, used by direct checks.
pub fn eval_point(op: &FieldOperator, m: usize) -> Point {
    op.grid.node(op.grid.pixel(op.eval_pixels[m]))
}

fn residuals(op: &FieldOperator, preds: &[ProbabilityImage], labels: &[LabelImage]) -> Result<Vec<Vec<Complex64>>> {
    check_batch(preds, labels)?;
    if preds[0].values.len() != op.cols() || (preds[0].n_x, preds[0].n_y) != (op.grid.n_x, op.grid.n_y) {
        return Err(Error::shape(
            "field operator",
            format!("{}x{}", op.grid.n_x, op.grid.n_y),
            format!("{}x{}", preds[0].n_x, preds[0].n_y),
        ));
    }
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let diff: Vec<f64> = l
                .pixels
                .iter()
                .zip(&p.values)
                .map(|(&li, &pi)| li as f64 - pi)
                .collect();
            op.apply(&diff)
        })
        .collect())
}

fn residual_energy(r: &[Vec<Complex64>]) -> f64 {
    r.iter().flatten().map(|z| z.norm_sqr()).sum()
}

pub fn pi_loss(op: &FieldOperator, preds: &[ProbabilityImage], labels: &[LabelImage]) -> Result<f64> {
    let r = residuals(op, preds, labels)?;
    Ok(residual_energy(&r).sqrt() / (preds.len() * op.cols()) as f64)
}

/// Gradient of [`pi_loss`] with respect to every prediction pixel; zero when
/// the loss is exactly zero.
pub fn pi_loss_output_grad(
    op: &FieldOperator,
    preds: &[ProbabilityImage],
    labels: &[LabelImage],
) -> Result<Vec<Vec<f64>>> {
    let r = residuals(op, preds, labels)?;
    let norm = residual_energy(&r).sqrt();
    if norm == 0.0 {
        return Ok(vec![vec![0.0; op.cols()]; preds.len()]);
    }
    let scale = -1.0 / ((preds.len() * op.cols()) as f64 * norm);
    Ok(r
        .iter()
        .map(|rq| op.adjoint_real(rq).into_iter().map(|v| v * scale).collect())
        .collect())
}

/// Mean of [`pi_loss`] over several operators (frequencies).
pub fn pi_loss_multi(ops: &[FieldOperator], preds: &[ProbabilityImage], labels: &[LabelImage]) -> Result<f64> {
    if ops.is_empty() {
        return Err(Error::invalid("loss.operators", "need at least one field operator"));
    }
    let mut sum = 0.0;
    for op in ops {
        sum += pi_loss(op, preds, labels)?;
    }
    Ok(sum / ops.len() as f64)
}

pub fn pi_loss_multi_output_grad(
    ops: &[FieldOperator],
    preds: &[ProbabilityImage],
    labels: &[LabelImage],
) -> Result<Vec<Vec<f64>>> {
    if ops.is_empty() {
        return Err(Error::invalid("loss.operators", "need at least one field operator"));
    }
    let mut acc = vec![vec![0.0; preds.first().map_or(0, |p| p.values.len())]; preds.len()];
    let w = 1.0 / ops.len() as f64;
    for op in ops {
        for (a, g) in acc.iter_mut().zip(pi_loss_output_grad(op, preds, labels)?) {
            a.iter_mut().zip(g).for_each(|(a, g)| *a += w * g);
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub nll: f64,
    pub pi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { nll: 0.5, pi: 0.5 }
    }
}

impl LossWeights {
    pub fn nll_only() -> Self {
        LossWeights { nll: 1.0, pi: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nll >= 0.0 && self.pi >= 0.0 && self.nll.is_finite() && self.pi.is_finite()) {
            return Err(Error::invalid("loss.weights", "weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleLoss {
    pub cross_entropy: f64,
    /// `|r_q|` for the first operator; zero when the physics term is off.
    pub field_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub nll: f64,
    pub pi: f64,
    pub combined: f64,
    pub per_sample: Vec<SampleLoss>,
}

/// `w_nll * nll + w_pi * pi`. The physics term is evaluated only when its
/// weight is positive and operators are supplied; otherwise it reports 0.
pub fn combined_loss(
    ops: &[FieldOperator],
    preds: &[ProbabilityImage],
    labels: &[LabelImage],
    weights: LossWeights,
    variant: CrossEntropyVariant,
) -> Result<LossReport> {
    check_batch(preds, labels)?;
    let per_ce = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| cross_entropy_with(p, l, variant))
        .collect::<Result<Vec<_>>>()?;
    let nll = per_ce.iter().sum::<f64>() / preds.len() as f64;
    let use_pi = weights.pi > 0.0 && !ops.is_empty();
    let (pi, residual_norms) = if use_pi {
        let norms: Vec<f64> = residuals(&ops[0], preds, labels)?
            .iter()
            .map(|r| r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        (pi_loss_multi(ops, preds, labels)?, norms)
    } else {
        (0.0, vec![0.0; preds.len()])
    };
    let combined = weights.nll * nll + if use_pi { weights.pi * pi } else { 0.0 };
    Ok(LossReport {
        nll,
        pi,
        combined,
        per_sample: per_ce
            .into_iter()
            .zip(residual_norms)
            .map(|(cross_entropy, field_residual)| SampleLoss {
                cross_entropy,
                field_residual,
            })
            .collect(),
    })
}

/// Gradient of the combined loss with respect to every prediction pixel.
pub fn combined_output_grad(
    ops: &[FieldOperator],
    preds: &[ProbabilityImage],
    labels: &[LabelImage],
    weights: LossWeights,
    variant: CrossEntropyVariant,
) -> Result<Vec<Vec<f64>>> {
    let mut grads = nll_loss_output_grad(preds, labels, variant)?;
    for g in &mut grads {
        g.iter_mut().for_each(|v| *v *= weights.nll);
    }
    if weights.pi > 0.0 && !ops.is_empty() {
        let pi = pi_loss_multi_output_grad(ops, preds, labels)?;
        for (g, p) in grads.iter_mut().zip(pi) {
            g.iter_mut().zip(p).for_each(|(g, p)| *g += weights.pi * p);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(n_x: usize, n_y: usize, values: Vec<f64>) -> ProbabilityImage {
        ProbabilityImage { n_x, n_y, values }
    }

    fn label(n_x: usize, n_y: usize, pixels: Vec<u8>) -> LabelImage {
        LabelImage { n_x, n_y, pixels }
    }

    #[test]
    fn half_prediction_gives_log_two() {
        let l = label(2, 3, vec![1, 0, 0, 1, 1, 0]);
        let p = img(2, 3, vec![0.5; 6]);
        assert!((cross_entropy(&p, &l).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_hand_value() {
        let p = img(2, 2, vec![0.9, 0.1, 0.8, 0.2]);
        let l = label(2, 2, vec![1, 0, 1, 0]);
        let expected = -(0.9f64.ln() * 2.0 + 0.8f64.ln() * 2.0) / 4.0;
        let v = cross_entropy(&p, &l).unwrap();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn near_perfect_prediction_hits_clamp_floor() {
        let l = label(2, 2, vec![1, 0, 0, 1]);
        let floor = crate::nn::PROB_FLOOR;
        let p = img(2, 2, vec![1.0 - floor, floor, floor, 1.0 - floor]);
        let v = cross_entropy(&p, &l).unwrap();
        assert!(v > 0.0 && v < 2e-7, "{v}");
    }

    #[test]
    fn one_sided_variant_ignores_background() {
        let p = img(1, 2, vec![0.5, 0.9]);
        let l = label(1, 2, vec![1, 0]);
        let v = cross_entropy_with(&p, &l, CrossEntropyVariant::OneSided).unwrap();
        assert!((v - 2f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn nll_batches() {
        let p = img(2, 2, vec![0.9, 0.1, 0.8, 0.2]);
        let l = label(2, 2, vec![1, 0, 1, 0]);
        let v = batch_nll(std::slice::from_ref(&p), std::slice::from_ref(&l));
        assert!((v - cross_entropy(&p, &l).unwrap()).abs() < 1e-15);
        let v2 = batch_nll(&[p.clone(), p.clone()], &[l.clone(), l.clone()]);
        assert!((v - v2).abs() < 1e-15);

        let floor = crate::nn::PROB_FLOOR;
        let perfect = img(2, 2, vec![1.0 - floor, floor, 1.0 - floor, floor]);
        let floor_term = cross_entropy(&perfect, &l).unwrap();
        let mixed = batch_nll(&[p, perfect], &[l.clone(), l]);
        assert!((mixed - (0.164252 / 2.0 + floor_term / 2.0)).abs() < 1e-6);
        assert!(nll_loss(&[], &[], CrossEntropyVariant::TwoSided).is_err());
    }

    fn batch_nll(p: &[ProbabilityImage], l: &[LabelImage]) -> f64 {
        nll_loss(p, l, CrossEntropyVariant::TwoSided).unwrap()
    }

    fn identity_operator(grid: SearchGrid) -> FieldOperator {
        let n = grid.len();
        let mut matrix = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            matrix[i * n + i] = Complex64::new(1.0, 0.0);
        }
        FieldOperator {
            grid,
            omega: 1.0,
            eval_stride: 1,
            self_offset: 1.0,
            eval_pixels: (0..n).collect(),
            matrix,
        }
    }

    #[test]
    fn pi_loss_identity_operator() {
        let grid = SearchGrid::new(0.0, 1.0, 0.0, 2.0, 2, 3).unwrap();
        let op = identity_operator(grid);
        let l = label(2, 3, vec![1, 0, 0, 0, 0, 0]);
        let p = img(2, 3, vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let v = pi_loss(&op, &[p], std::slice::from_ref(&l)).unwrap();
        assert!((v - 0.5 / 6.0).abs() < 1e-15);
        let exact = img(2, 3, l.to_f64());
        assert_eq!(pi_loss(&op, std::slice::from_ref(&exact), std::slice::from_ref(&l)).unwrap(), 0.0);
        let g = pi_loss_output_grad(&op, &[exact], &[l]).unwrap();
        assert!(g[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_sample_scales_by_inverse_sqrt_two() {
        let grid = SearchGrid::new(0.0, 1.0, 0.0, 2.0, 2, 3).unwrap();
        let op = identity_operator(grid);
        let l = label(2, 3, vec![1, 1, 0, 0, 0, 1]);
        let p = img(2, 3, vec![0.3, 0.9, 0.2, 0.1, 0.4, 0.6]);
        let one = pi_loss(&op, std::slice::from_ref(&p), std::slice::from_ref(&l)).unwrap();
        let two = pi_loss(&op, &[p.clone(), p], &[l.clone(), l]).unwrap();
        assert!((two - one * 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn combined_weights() {
        let grid = SearchGrid::new(0.0, 1.0, 0.0, 2.0, 2, 3).unwrap();
        let op = identity_operator(grid);
        let l = label(2, 3, vec![1, 1, 0, 0, 0, 1]);
        let p = img(2, 3, vec![0.3, 0.9, 0.2, 0.1, 0.4, 0.6]);
        let v = CrossEntropyVariant::TwoSided;
        let nll_only =
            combined_loss(std::slice::from_ref(&op), std::slice::from_ref(&p), std::slice::from_ref(&l), LossWeights::nll_only(), v).unwrap();
        assert_eq!(nll_only.combined, nll_only.nll);
        let both = combined_loss(&[op], &[p], &[l], LossWeights::default(), v).unwrap();
        assert!((both.combined - 0.5 * (both.nll + both.pi)).abs() < 1e-15);
        assert_eq!(both.per_sample.len(), 1);
        assert!(both.pi > 0.0);
        let w = LossWeights::default();
        assert!((w.nll * 0.4 + w.pi * 0.2 - 0.3f64).abs() < 1e-15);
    }

    #[test]
    fn operator_cache_round_trip() {
        let model = WaveguideModel::new(1500.0, 200.0).unwrap();
        let grid = SearchGrid::new(490.0, 500.0, 40.0, 60.0, 3, 3).unwrap();
        let spec = OperatorSpec::new(&model, &grid, 32.0625, 1, None, Some(60)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = FieldOperator::load_or_build(&spec, Some(dir.path())).unwrap();
        let path = operator_cache_path(dir.path(), &spec).unwrap();
        assert!(path.exists());
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"WGOP");
        let b = FieldOperator::load_or_build(&spec, Some(dir.path())).unwrap();
        assert_eq!(a, b);
        let (stored, _) = FieldOperator::load(&path).unwrap();
        assert_eq!(stored, spec);
    }

    #[test]
    fn single_pixel_operator_holds_regularized_self_term() {
        let model = WaveguideModel::new(1500.0, 200.0).unwrap();
        let grid = SearchGrid::new(500.0, 502.0, 100.0, 100.0, 1, 1).unwrap();
        let spec = OperatorSpec::new(&model, &grid, 32.0625, 1, None, None).unwrap();
        assert_eq!(spec.self_offset, 1.0);
        let op = spec.build().unwrap();
        assert_eq!((op.rows(), op.cols()), (1, 1));
        let basis = ModalBasis::new(&model, model.wavenumber(32.0625), spec.n_modes).unwrap();
        let direct = crate::physics::greens_function(
            &model,
            &basis,
            Point::new(501.0, 100.0),
            Point::new(500.0, 100.0),
        )
        .unwrap();
        assert!((op.get(0, 0) - direct).norm() < 1e-12);
    }
}
