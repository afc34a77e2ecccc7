//! Search grid and the Kirchhoff-migration baseline image.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{
    ArrayGeometry, FrequencyGrid, ModalBasis, Point, ResponseTensor, Truncation, WaveguideModel,
    MIN_OFFSET,
};

/// Pixel index `(ix, iy)` on a [`SearchGrid`].
pub type Pixel = (usize, usize);

/// Uniform pixel grid over `[x_min, x_max] x [y_min, y_max]`. Pixel centers
/// include both bounds; images are stored row-major with `x` as the row index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub n_x: usize,
    pub n_y: usize,
}

impl SearchGrid {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, n_x: usize, n_y: usize) -> Result<Self> {
        let grid = SearchGrid {
            x_min,
            x_max,
            y_min,
            y_max,
            n_x,
            n_y,
        };
        grid.validate(None)?;
        Ok(grid)
    }

    pub fn validate(&self, model: Option<&WaveguideModel>) -> Result<()> {
        if self.n_x == 0 || self.n_y == 0 {
            return Err(Error::invalid("grid.n_x/n_y", "need at least one pixel per axis"));
        }
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max < self.x_min || self.y_max < self.y_min {
            return Err(Error::invalid("grid.bounds", "bounds must be finite and ordered"));
        }
        if self.n_x > 1 && self.x_max == self.x_min {
            return Err(Error::invalid("grid.x_max", "several columns need a positive extent"));
        }
        if self.n_y > 1 && self.y_max == self.y_min {
            return Err(Error::invalid("grid.y_max", "several rows need a positive extent"));
        }
        if let Some(m) = model {
            if self.y_min < 0.0 || self.y_max > m.depth {
                return Err(Error::invalid(
                    "grid.y_min/y_max",
                    format!("depth bounds must lie within [0, {}]", m.depth),
                ));
            }
        }
        Ok(())
    }

    /// Pixel spacing along `x`; for a single column, the full extent.
    pub fn h_x(&self) -> f64 {
        spacing(self.x_min, self.x_max, self.n_x)
    }

    pub fn h_y(&self) -> f64 {
        spacing(self.y_min, self.y_max, self.n_y)
    }

    pub fn x(&self, ix: usize) -> f64 {
        if self.n_x == 1 {
            self.x_min
        } else {
            self.x_min + ix as f64 * self.h_x()
        }
    }

    pub fn y(&self, iy: usize) -> f64 {
        if self.n_y == 1 {
            self.y_min
        } else {
            self.y_min + iy as f64 * self.h_y()
        }
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, (ix, iy): Pixel) -> usize {
        ix * self.n_y + iy
    }

    pub fn pixel(&self, index: usize) -> Pixel {
        (index / self.n_y, index % self.n_y)
    }

    pub fn node(&self, (ix, iy): Pixel) -> Point {
        Point::new(self.x(ix), self.y(iy))
    }

    /// Nearest pixel, clamped to the grid.
    pub fn nearest_pixel(&self, p: Point) -> Pixel {
        let snap = |v: f64, lo: f64, h: f64, n: usize| -> usize {
            if n == 1 || h == 0.0 {
                return 0;
            }
            ((v - lo) / h).round().clamp(0.0, (n - 1) as f64) as usize
        };
        (
            snap(p.x, self.x_min, self.h_x(), self.n_x),
            snap(p.y, self.y_min, self.h_y(), self.n_y),
        )
    }

    /// The pixel whose center is `p`, if any (to within a millionth of a
    /// pixel).
    pub fn pixel_at(&self, p: Point) -> Option<Pixel> {
        let px = self.nearest_pixel(p);
        let node = self.node(px);
        let tol_x = 1e-6 * self.h_x().max(1e-9);
        let tol_y = 1e-6 * self.h_y().max(1e-9);
        ((node.x - p.x).abs() <= tol_x && (node.y - p.y).abs() <= tol_y).then_some(px)
    }

    /// Smallest horizontal distance between the array and any pixel column.
    pub fn min_offset_from(&self, x_array: f64) -> f64 {
        if x_array >= self.x_min && x_array <= self.x_max {
            (0..self.n_x)
                .map(|ix| (self.x(ix) - x_array).abs())
                .fold(f64::INFINITY, f64::min)
        } else {
            (self.x_min - x_array).abs().min((self.x_max - x_array).abs())
        }
    }
}

fn spacing(lo: f64, hi: f64, n: usize) -> f64 {
    if n > 1 {
        (hi - lo) / (n - 1) as f64
    } else {
        hi - lo
    }
}

/// Complex Kirchhoff-migration image; the modulus is taken only on export.
#[derive(Clone, Debug, PartialEq)]
pub struct KMImage {
    pub grid: SearchGrid,
    pub values: Vec<Complex64>,
}

impl KMImage {
    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm()).collect()
    }

    pub fn get(&self, px: Pixel) -> Complex64 {
        self.values[self.grid.index(px)]
    }
}

/// Migration engine for one geometry; reusable across response tensors.
#[derive(Clone, Debug)]
pub struct KirchhoffMigration {
    grid: SearchGrid,
    n_r: usize,
    bases: Vec<ModalBasis>,
    // [frequency][receiver][mode]
    receiver_shapes: Vec<Vec<Vec<f64>>>,
    // [frequency][row][mode]
    row_shapes: Vec<Vec<Vec<f64>>>,
    // [frequency][column][mode]
    column_propagators: Vec<Vec<Vec<Complex64>>>,
}

impl KirchhoffMigration {
    pub fn new(
        model: &WaveguideModel,
        frequencies: &FrequencyGrid,
        array: &ArrayGeometry,
        grid: &SearchGrid,
        truncation: Option<Truncation>,
    ) -> Result<Self> {
        model.validate()?;
        array.validate(model)?;
        grid.validate(Some(model))?;
        let min_offset = grid.min_offset_from(array.x);
        let truncation = match truncation {
            Some(t) => t,
            None if min_offset >= MIN_OFFSET => Truncation::Auto { min_offset },
            None => {
                return Err(Error::invalid(
                    "grid",
                    "search grid contains the array column; give an explicit truncation",
                ))
            }
        };
        let bases = frequencies
            .wavenumbers(model)
            .into_iter()
            .map(|k| ModalBasis::with_truncation(model, k, truncation))
            .collect::<Result<Vec<_>>>()?;
        let receiver_shapes = bases
            .iter()
            .map(|b| array.receiver_y.iter().map(|&y| b.mode_shapes(y)).collect())
            .collect();
        let row_shapes = bases
            .iter()
            .map(|b| (0..grid.n_y).map(|iy| b.mode_shapes(grid.y(iy))).collect())
            .collect();
        let column_propagators = bases
            .iter()
            .map(|b| {
                (0..grid.n_x)
                    .map(|ix| b.propagators((grid.x(ix) - array.x).abs()))
                    .collect()
            })
            .collect();
        Ok(KirchhoffMigration {
            grid: *grid,
            n_r: array.len(),
            bases,
            receiver_shapes,
            row_shapes,
            column_propagators,
        })
    }

    /// `I(y) = sum_w sum_r conj(Pi(x_r; w)) G(x_r, y; w)` at every pixel.
    pub fn image(&self, response: &ResponseTensor) -> Result<KMImage> {
        let expected = (self.n_r, self.bases.len());
        if response.dims() != expected {
            return Err(Error::shape(
                "Kirchhoff migration input",
                format!("{expected:?}"),
                format!("{:?}", response.dims()),
            ));
        }
        let grid = self.grid;
        let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (j, basis) in self.bases.iter().enumerate() {
            let data: Vec<Complex64> = response.column(j).iter().map(|z| z.conj()).collect();
            for ix in 0..grid.n_x {
                let prop = &self.column_propagators[j][ix];
                for iy in 0..grid.n_y {
                    let shapes = &self.row_shapes[j][iy];
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (r, d) in data.iter().enumerate() {
                        acc += d * basis.combine(prop, &self.receiver_shapes[j][r], shapes);
                    }
                    values[grid.index((ix, iy))] += acc;
                }
            }
        }
        Ok(KMImage { grid, values })
    }
}

pub fn km_image(
    response: &ResponseTensor,
    model: &WaveguideModel,
    frequencies: &FrequencyGrid,
    array: &ArrayGeometry,
    grid: &SearchGrid,
) -> Result<KMImage> {
    KirchhoffMigration::new(model, frequencies, array, grid, None)?.image(response)
}

/// Pixel of largest modulus; ties go to the lowest row-major index.
pub fn argmax_pixel(img: &KMImage) -> Pixel {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, z) in img.values.iter().enumerate() {
        let v = z.norm();
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    img.grid.pixel(best)
}

/// 4-connected component of `{v >= level}` that contains `seed`.
pub fn superlevel_component(values: &[f64], grid: &SearchGrid, level: f64, seed: Pixel) -> Vec<Pixel> {
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    let start = grid.index(seed);
    if values[start] < level {
        return out;
    }
    let mut stack = vec![seed];
    seen[start] = true;
    while let Some((ix, iy)) = stack.pop() {
        out.push((ix, iy));
        let mut push = |p: Pixel| {
            let i = grid.index(p);
            if !seen[i] && values[i] >= level {
                seen[i] = true;
                stack.push(p);
            }
        };
        if ix > 0 {
            push((ix - 1, iy));
        }
        if ix + 1 < grid.n_x {
            push((ix + 1, iy));
        }
        if iy > 0 {
            push((ix, iy - 1));
        }
        if iy + 1 < grid.n_y {
            push((ix, iy + 1));
        }
    }
    out.sort_unstable();
    out
}
