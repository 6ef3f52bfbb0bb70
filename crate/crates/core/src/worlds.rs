//! Ground-truth worlds: a factorized uniform prior over a discrete factor
//! grid and a deterministic renderer from factors to images.

use std::collections::HashSet;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor_io::Tensor;
use crate::{Error, Result};

/// Default cap on the number of rows [`FactorWorld::enumerate_grid`] will
/// materialize.
pub const DEFAULT_GRID_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpace {
    factors: Vec<Factor>,
}

impl FactorSpace {
    pub fn new(factors: Vec<(&str, usize)>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::Validation(format!("a factor space needs at least 2 factors, got {}", factors.len())));
        }
        let mut seen = HashSet::new();
        for (name, card) in &factors {
            if *card == 0 {
                return Err(Error::Validation(format!("factor '{name}' has cardinality 0")));
            }
            if !seen.insert(*name) {
                return Err(Error::Validation(format!("duplicate factor name '{name}'")));
            }
        }
        Ok(Self {
            factors: factors
                .into_iter()
                .map(|(name, cardinality)| Factor { name: name.to_string(), cardinality })
                .collect(),
        })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.cardinality).collect()
    }

    /// Number of points in the full factor grid, computed without overflow.
    pub fn grid_size(&self) -> u128 {
        self.factors.iter().map(|f| f.cardinality as u128).product()
    }

    /// Indices of factors with more than one value.
    pub fn informative_factors(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.factors[j].cardinality > 1).collect()
    }

    pub fn sample_with<R: Rng>(&self, n: usize, r: &mut R) -> FactorMatrix {
        let cards = self.cardinalities();
        let mut data = Vec::with_capacity(n * cards.len());
        for _ in 0..n {
            for &c in &cards {
                data.push(r.random_range(0..c));
            }
        }
        FactorMatrix { cardinalities: cards, rows: n, data }
    }

    pub fn sample_fixed_with<R: Rng>(&self, fixed_index: usize, n: usize, r: &mut R) -> Result<(FactorMatrix, usize)> {
        let k = self.len();
        if fixed_index >= k {
            return Err(Error::Validation(format!("fixed factor index {fixed_index} out of range for {k} factors")));
        }
        let value = r.random_range(0..self.factors[fixed_index].cardinality);
        let mut m = self.sample_with(n, r);
        for i in 0..n {
            m.data[i * k + fixed_index] = value;
        }
        Ok((m, value))
    }

    /// Mixed-radix position of a factor row in the row-major grid.
    pub fn grid_index(&self, row: &[usize]) -> usize {
        row.iter().zip(&self.factors).fold(0usize, |acc, (&v, f)| acc * f.cardinality + v)
    }
}

/// Maps a factor index to `[0, 1]`. Single-valued factors map to 0.
pub fn normalized_value(value: usize, cardinality: usize) -> f64 {
    if cardinality <= 1 {
        0.0
    } else {
        value as f64 / (cardinality - 1) as f64
    }
}

/// `N x k` matrix of integer factor indices, tagged with the cardinality of
/// every column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorMatrix {
    cardinalities: Vec<usize>,
    rows: usize,
    data: Vec<usize>,
}

impl FactorMatrix {
    pub fn new(cardinalities: Vec<usize>, data: Vec<usize>) -> Result<Self> {
        let k = cardinalities.len();
        if k == 0 {
            return Err(Error::Validation("factor matrix needs at least one column".into()));
        }
        if data.len() % k != 0 {
            return Err(Error::Shape(format!("{} entries is not a multiple of {k} columns", data.len())));
        }
        let rows = data.len() / k;
        for (i, row) in data.chunks(k).enumerate() {
            for (j, (&v, &c)) in row.iter().zip(&cardinalities).enumerate() {
                if v >= c {
                    return Err(Error::Validation(format!(
                        "factor value {v} out of range at row {i}, column {j} (cardinality {c})"
                    )));
                }
            }
        }
        Ok(Self { cardinalities, rows, data })
    }

    pub fn empty(cardinalities: Vec<usize>) -> Self {
        Self { cardinalities, rows: 0, data: Vec::new() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn row(&self, i: usize) -> &[usize] {
        let k = self.cols();
        &self.data[i * k..(i + 1) * k]
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.data[i * self.cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<usize> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[usize] {
        &self.data
    }

    /// Row `i` mapped to normalized reals.
    pub fn normalized_row(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().zip(&self.cardinalities).map(|(&v, &c)| normalized_value(v, c)).collect()
    }

    /// Keeps the rows at `indices`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let k = self.cols();
        let mut data = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { cardinalities: self.cardinalities.clone(), rows: indices.len(), data }
    }

    /// `i64 [N, k]` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::i64(vec![self.rows as u64, self.cols() as u64], self.data.iter().map(|&v| v as i64).collect())
    }

    pub fn from_tensor(t: &Tensor, cardinalities: Vec<usize>) -> Result<Self> {
        let (_, k) = t.matrix_dims()?;
        if k != cardinalities.len() {
            return Err(Error::Shape(format!("factor tensor has {k} columns, world has {}", cardinalities.len())));
        }
        let data = t
            .as_i64()?
            .iter()
            .map(|&v| usize::try_from(v).map_err(|_| Error::Validation(format!("negative factor value {v}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cardinalities, data)
    }
}

/// `N x (H*W*C)` pixel matrix with entries in `[0, 1]`, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    rows: usize,
    width: usize,
    data: Vec<f32>,
}

impl ObservationBatch {
    pub fn new(width: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || data.len() % width != 0 {
            return Err(Error::Shape(format!("{} pixels do not form rows of width {width}", data.len())));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { rows: data.len() / width, width, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `f32 [N, width]` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::f32(vec![self.rows as u64, self.width as u64], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (_, width) = t.matrix_dims()?;
        Self::new(width, t.as_f32()?.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldKind {
    DspritesLite,
    ColorDspritesLite,
}

impl WorldKind {
    pub fn name(&self) -> &'static str {
        match self {
            WorldKind::DspritesLite => "dsprites-lite",
            WorldKind::ColorDspritesLite => "color-dsprites-lite",
        }
    }
}

fn default_size() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub kind: WorldKind,
    /// Image side length in pixels: 16 or 64.
    #[serde(default = "default_size")]
    pub size: usize,
}

impl WorldConfig {
    pub fn dsprites_lite(size: usize) -> Self {
        Self { kind: WorldKind::DspritesLite, size }
    }

    pub fn color_dsprites_lite(size: usize) -> Self {
        Self { kind: WorldKind::ColorDspritesLite, size }
    }

    /// Short label used in run ids and score records.
    pub fn label(&self) -> String {
        format!("{}-{}", self.kind.name(), self.size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Square,
    Ellipse,
    Heart,
}

const SHAPES: [Shape; 3] = [Shape::Square, Shape::Ellipse, Shape::Heart];

/// RGB tints for the color world. Binary coverage is multiplied by the tint.
const TINTS: [[f32; 3]; 5] =
    [[1.0, 1.0, 1.0], [1.0, 0.25, 0.25], [0.25, 1.0, 0.25], [0.25, 0.25, 1.0], [1.0, 1.0, 0.25]];

/// Half-extent of a shape at the largest scale, as a fraction of the image.
const MAX_HALF_EXTENT: f64 = 0.3;
const SCALES: usize = 6;
const ORIENTATIONS: usize = 8;
const POSITIONS: usize = 16;

pub const MANIFEST_FORMAT: &str = "untangle-world-1";

/// Description of an exported dataset: the world, its factors and the shape
/// of the accompanying tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldManifest {
    pub format: String,
    pub world: WorldConfig,
    pub world_hash: String,
    pub factors: Vec<Factor>,
    /// `[height, width, channels]`.
    pub image_shape: [usize; 3],
    pub rows: usize,
    /// `None` when the export is the full grid.
    pub sample_seed: Option<u64>,
}

impl WorldManifest {
    pub fn new(world: &FactorWorld, rows: usize, sample_seed: Option<u64>) -> Self {
        let (h, w, c) = world.image_shape();
        Self {
            format: MANIFEST_FORMAT.into(),
            world: world.config().clone(),
            world_hash: world.manifest_hash(),
            factors: world.space().factors().to_vec(),
            image_shape: [h, w, c],
            rows,
            sample_seed,
        }
    }

    /// Rebuilds the world and checks that the manifest describes it.
    pub fn world(&self) -> Result<FactorWorld> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unknown manifest format '{}'", self.format)));
        }
        let w = FactorWorld::new(self.world.clone())?;
        if w.manifest_hash() != self.world_hash || w.space().factors() != self.factors.as_slice() {
            return Err(Error::Format("manifest does not match its world config".into()));
        }
        Ok(w)
    }
}

/// A procedural sprite world. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorWorld {
    config: WorldConfig,
    space: FactorSpace,
    channels: usize,
    /// Offset of the shape factor; the color world puts color first.
    shape_col: usize,
}

impl FactorWorld {
    pub fn new(config: WorldConfig) -> Result<Self> {
        if config.size != 16 && config.size != 64 {
            return Err(Error::Config(format!("image size must be 16 or 64, got {}", config.size)));
        }
        let mut factors = Vec::new();
        if config.kind == WorldKind::ColorDspritesLite {
            factors.push(("color", TINTS.len()));
        }
        let shape_col = factors.len();
        factors.extend([
            ("shape", SHAPES.len()),
            ("scale", SCALES),
            ("orientation", ORIENTATIONS),
            ("pos_x", POSITIONS),
            ("pos_y", POSITIONS),
        ]);
        let channels = if config.kind == WorldKind::ColorDspritesLite { 3 } else { 1 };
        Ok(Self { space: FactorSpace::new(factors)?, config, channels, shape_col })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn space(&self) -> &FactorSpace {
        &self.space
    }

    /// `(height, width, channels)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.config.size, self.config.size, self.channels)
    }

    pub fn pixels(&self) -> usize {
        self.config.size * self.config.size * self.channels
    }

    /// Hex SHA-256 of the canonical JSON world config.
    pub fn manifest_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(&self.config).expect("world config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Draws `n` i.i.d. rows from the uniform factorized prior.
    pub fn sample_factors(&self, n: usize, seed: u64) -> FactorMatrix {
        let mut r = rng::stream(seed, rng::streams::BATCHES);
        self.sample_factors_with(n, &mut r)
    }

    pub fn sample_factors_with<R: Rng>(&self, n: usize, r: &mut R) -> FactorMatrix {
        self.space.sample_with(n, r)
    }

    /// Draws one value for factor `fixed_index`, shares it across all `n`
    /// rows, and samples every other column i.i.d.
    pub fn sample_with_factor_fixed(&self, fixed_index: usize, n: usize, seed: u64) -> Result<(FactorMatrix, usize)> {
        let mut r = rng::stream(seed, rng::streams::BATCHES);
        self.space.sample_fixed_with(fixed_index, n, &mut r)
    }

    pub fn sample_with_factor_fixed_with<R: Rng>(
        &self,
        fixed_index: usize,
        n: usize,
        r: &mut R,
    ) -> Result<(FactorMatrix, usize)> {
        self.space.sample_fixed_with(fixed_index, n, r)
    }

    pub fn enumerate_grid(&self) -> Result<FactorMatrix> {
        self.enumerate_grid_capped(DEFAULT_GRID_CAP)
    }

    /// Every grid point exactly once, row-major with the last factor varying
    /// fastest.
    pub fn enumerate_grid_capped(&self, cap: u128) -> Result<FactorMatrix> {
        enumerate_grid(&self.space, cap)
    }

    pub fn render(&self, factors: &FactorMatrix) -> Result<ObservationBatch> {
        if factors.cardinalities() != self.space.cardinalities().as_slice() {
            return Err(Error::Validation(format!(
                "factor matrix cardinalities {:?} do not match world {:?}",
                factors.cardinalities(),
                self.space.cardinalities()
            )));
        }
        let width = self.pixels();
        let mut data = vec![0f32; factors.rows() * width];
        for (i, out) in data.chunks_mut(width).enumerate() {
            self.render_row(factors.row(i), out);
        }
        Ok(ObservationBatch { rows: factors.rows(), width, data })
    }

    /// Renders one factor row into `out` (length `pixels()`), overwriting it.
    /// Rows are assumed valid for this world.
    pub fn render_row(&self, row: &[usize], out: &mut [f32]) {
        let s = self.shape_col;
        let tint = if self.channels == 3 { TINTS[row[0]] } else { [1.0; 3] };
        let shape = SHAPES[row[s]];
        let half = MAX_HALF_EXTENT * (0.5 + 0.5 * row[s + 1] as f64 / (SCALES - 1) as f64);
        let period = match shape {
            Shape::Square => PI / 2.0,
            Shape::Ellipse => PI,
            Shape::Heart => 2.0 * PI,
        };
        let angle = period * row[s + 2] as f64 / ORIENTATIONS as f64;
        let cx = (row[s + 3] as f64 + 0.5) / POSITIONS as f64;
        let cy = (row[s + 4] as f64 + 0.5) / POSITIONS as f64;
        let (sin, cos) = angle.sin_cos();
        let size = self.config.size;
        for py in 0..size {
            let y = (py as f64 + 0.5) / size as f64 - cy;
            for px in 0..size {
                let x = (px as f64 + 0.5) / size as f64 - cx;
                // rotate the pixel into the shape frame, then scale to unit size
                let u = (cos * x + sin * y) / half;
                let v = (-sin * x + cos * y) / half;
                let inside = match shape {
                    Shape::Square => u.abs() <= 1.0 && v.abs() <= 1.0,
                    Shape::Ellipse => u * u + 4.0 * v * v <= 1.0,
                    Shape::Heart => {
                        // image y points down, the heart's lobes point up
                        let (hx, hy) = (1.1 * u, -1.1 * v + 0.1);
                        let t = hx * hx + hy * hy - 1.0;
                        t * t * t - hx * hx * hy * hy * hy <= 0.0
                    }
                };
                let base = (py * size + px) * self.channels;
                for c in 0..self.channels {
                    out[base + c] = if inside { tint[c] } else { 0.0 };
                }
            }
        }
    }
}

pub fn enumerate_grid(space: &FactorSpace, cap: u128) -> Result<FactorMatrix> {
    let required = space.grid_size();
    if required > cap {
        return Err(Error::Size { required, cap });
    }
    let cards = space.cardinalities();
    let k = cards.len();
    let n = required as usize;
    let mut data = Vec::with_capacity(n * k);
    let mut current = vec![0usize; k];
    for _ in 0..n {
        data.extend_from_slice(&current);
        for j in (0..k).rev() {
            current[j] += 1;
            if current[j] < cards[j] {
                break;
            }
            current[j] = 0;
        }
    }
    Ok(FactorMatrix { cardinalities: cards, rows: n, data })
}
