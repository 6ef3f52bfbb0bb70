//! Two generative models that produce the same observations from latents
//! that are rotations of each other.
//!
//! World A draws `z ~ N(0, I_d)` and renders `x = g(z)`. World B draws
//! `ẑ = R·z` and renders `x = g(Rᵀ·ẑ)`. Because the standard normal is
//! rotation invariant both worlds have the same prior and the same
//! distribution over `x`, yet a code that is axis aligned with `z` is mixed
//! with respect to `ẑ`.
//!
//! Latents are snapped to a `2^-30` lattice before rendering. `Rᵀ(R·z)`
//! differs from `z` only by rounding error far below half a lattice step, so
//! snapping recovers `z` exactly and the two worlds agree bit for bit when
//! fed the same base noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::metrics::{discretize, discretize_and_mi, mig_from_mi};
use crate::rng::{self, derive_seed, streams};
use crate::vae::RepresentationMatrix;
use crate::worlds::FactorMatrix;
use crate::{Error, Result};

pub const LATTICE_STEP: f64 = 1.0 / (1u64 << 30) as f64;
pub const MIN_REPORT_SAMPLES: usize = 10_000;
/// Quantile levels for the continuous latents.
pub const FACTOR_LEVELS: usize = 10;
/// Bins for the code dimensions.
pub const CODE_BINS: usize = 20;
pub const DECODER_HIDDEN: usize = 8;
pub const DECODER_OUTPUT: usize = 16;

const ANGLE_LOW: f64 = PI / 8.0;
const ANGLE_HIGH: f64 = 3.0 * PI / 8.0;

pub fn snap(v: f64) -> f64 {
    (v / LATTICE_STEP).round() * LATTICE_STEP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Givens {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
}

/// Orthogonal `d × d` matrix built as a product of Givens rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationMap {
    pub d: usize,
    /// Row-major.
    pub matrix: Vec<f64>,
    /// Rotations in the order they were applied.
    pub angles: Vec<Givens>,
}

/// Product of Givens rotations over every coordinate pair `(i, j)`, `i < j`,
/// in lexicographic order, with angles uniform in `[π/8, 3π/8]`.
pub fn make_rotation(d: usize, seed: u64) -> Result<RotationMap> {
    if d < 2 {
        return Err(Error::Validation(format!("rotation needs d >= 2, got {d}")));
    }
    let mut r = rng::stream(seed, streams::INIT);
    let mut angles = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            angles.push(Givens { i, j, theta: r.random_range(ANGLE_LOW..=ANGLE_HIGH) });
        }
    }
    RotationMap::from_angles(d, angles)
}

impl RotationMap {
    pub fn identity(d: usize) -> Result<Self> {
        Self::from_angles(d, Vec::new())
    }

    /// `R = G_m ··· G_1` for the given rotations `G_1, ..., G_m`, where `G`
    /// acts on the `(i, j)` plane as `[[cos, −sin], [sin, cos]]`.
    pub fn from_angles(d: usize, angles: Vec<Givens>) -> Result<Self> {
        if d < 2 {
            return Err(Error::Validation(format!("rotation needs d >= 2, got {d}")));
        }
        let mut m = vec![0.0; d * d];
        for k in 0..d {
            m[k * d + k] = 1.0;
        }
        for g in &angles {
            if g.i >= d || g.j >= d || g.i == g.j || !g.theta.is_finite() {
                return Err(Error::Validation(format!("bad Givens rotation {g:?} for d = {d}")));
            }
            let (s, c) = g.theta.sin_cos();
            for col in 0..d {
                let (a, b) = (m[g.i * d + col], m[g.j * d + col]);
                m[g.i * d + col] = c * a - s * b;
                m[g.j * d + col] = s * a + c * b;
            }
        }
        Ok(Self { d, matrix: m, angles })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.d + j]
    }

    /// `R·z`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (0..self.d).map(|i| (0..self.d).map(|j| self.get(i, j) * z[j]).sum()).collect()
    }

    /// `Rᵀ·z`.
    pub fn apply_transpose(&self, z: &[f64]) -> Vec<f64> {
        (0..self.d).map(|i| (0..self.d).map(|j| self.get(j, i) * z[j]).sum()).collect()
    }

    /// `max |RᵀR − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.d;
        let mut worst = 0.0f64;
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|k| self.get(k, a) * self.get(k, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> f64 {
        let d = self.d;
        let mut m = self.matrix.clone();
        let mut det = 1.0;
        for c in 0..d {
            let p = (c..d).max_by(|&a, &b| m[a * d + c].abs().total_cmp(&m[b * d + c].abs())).unwrap_or(c);
            if m[p * d + c] == 0.0 {
                return 0.0;
            }
            if p != c {
                for k in 0..d {
                    m.swap(p * d + k, c * d + k);
                }
                det = -det;
            }
            det *= m[c * d + c];
            for r in c + 1..d {
                let f = m[r * d + c] / m[c * d + c];
                for k in c..d {
                    m[r * d + k] -= f * m[c * d + k];
                }
            }
        }
        det
    }
}

/// Solves the symmetric positive definite system `a·x = b` by Cholesky.
fn spd_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let diag = a[j * n + j] - (0..j).map(|k| l[j * n + k] * l[j * n + k]).sum::<f64>();
        if !(diag > 0.0) {
            return Err(Error::Numeric("normal equations are singular".into()));
        }
        l[j * n + j] = diag.sqrt();
        for i in j + 1..n {
            let v = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            l[i * n + j] = v / l[j * n + j];
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    Ok(x)
}

/// Least-squares solution of `w·x = y` for a tall `rows × cols` matrix `w`.
fn least_squares(w: &[f64], rows: usize, cols: usize, y: &[f64]) -> Result<Vec<f64>> {
    let mut ata = vec![0.0; cols * cols];
    let mut aty = vec![0.0; cols];
    for a in 0..cols {
        for b in 0..cols {
            ata[a * cols + b] = (0..rows).map(|r| w[r * cols + a] * w[r * cols + b]).sum();
        }
        aty[a] = (0..rows).map(|r| w[r * cols + a] * y[r]).sum();
    }
    spd_solve(&ata, &aty, cols)
}

/// Fixed random two-layer network `x = W2·tanh(W1·z + b1) + b2`. Both weight
/// matrices are tall, so the map is injective and [`ToyDecoder::invert`]
/// recovers `z` from `x` by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDecoder {
    pub d: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl ToyDecoder {
    pub fn new(d: usize, seed: u64) -> Result<Self> {
        if d == 0 || d > DECODER_HIDDEN {
            return Err(Error::Validation(format!("toy decoder supports 1..={DECODER_HIDDEN} latents, got {d}")));
        }
        let mut r = rng::stream(derive_seed(seed, "toy-decoder"), streams::INIT);
        let mut normal =
            |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect() };
        let w1 = normal(DECODER_HIDDEN * d, 0.4);
        let b1 = normal(DECODER_HIDDEN, 0.1);
        let w2 = normal(DECODER_OUTPUT * DECODER_HIDDEN, 1.0 / (DECODER_HIDDEN as f64).sqrt());
        let b2 = normal(DECODER_OUTPUT, 0.1);
        Ok(Self { d, w1, b1, w2, b2 })
    }

    pub fn output_dim(&self) -> usize {
        DECODER_OUTPUT
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = (0..DECODER_HIDDEN)
            .map(|i| ((0..self.d).map(|j| self.w1[i * self.d + j] * z[j]).sum::<f64>() + self.b1[i]).tanh())
            .collect();
        (0..DECODER_OUTPUT)
            .map(|o| (0..DECODER_HIDDEN).map(|i| self.w2[o * DECODER_HIDDEN + i] * h[i]).sum::<f64>() + self.b2[o])
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != DECODER_OUTPUT {
            return Err(Error::Shape(format!("observation has {} values, expected {DECODER_OUTPUT}", x.len())));
        }
        let shifted: Vec<f64> = x.iter().zip(&self.b2).map(|(a, b)| a - b).collect();
        let h = least_squares(&self.w2, DECODER_OUTPUT, DECODER_HIDDEN, &shifted)?;
        if h.iter().any(|v| v.abs() >= 1.0) {
            return Err(Error::Numeric("observation is outside the decoder's range".into()));
        }
        let pre: Vec<f64> = h.iter().zip(&self.b1).map(|(v, b)| v.atanh() - b).collect();
        least_squares(&self.w1, DECODER_HIDDEN, self.d, &pre)
    }
}

/// World A with latents `z` and world B with latents `ẑ = R·z`, sharing the
/// decoder `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinWorlds {
    pub decoder: ToyDecoder,
    pub rotation: RotationMap,
}

pub fn build_twin_worlds(decoder: ToyDecoder, rotation: RotationMap) -> Result<TwinWorlds> {
    if decoder.d != rotation.d {
        return Err(Error::Shape(format!("decoder has {} latents, rotation is {}x{0}", decoder.d, rotation.d)));
    }
    Ok(TwinWorlds { decoder, rotation })
}

impl TwinWorlds {
    pub fn d(&self) -> usize {
        self.rotation.d
    }

    /// `n` standard normal latents snapped to the lattice.
    pub fn sample_base(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, streams::NOISE);
        (0..n).map(|_| (0..self.d()).map(|_| snap(r.sample(StandardNormal))).collect()).collect()
    }

    /// World B's latents for the same base noise.
    pub fn rotate(&self, z: &[Vec<f64>]) -> Vec<Vec<f64>> {
        z.iter().map(|row| self.rotation.apply(row)).collect()
    }

    pub fn observe_a(&self, z: &[f64]) -> Vec<f64> {
        self.decoder.decode(&z.iter().map(|&v| snap(v)).collect::<Vec<_>>())
    }

    pub fn observe_b(&self, z_hat: &[f64]) -> Vec<f64> {
        self.decoder.decode(&self.rotation.apply_transpose(z_hat).into_iter().map(snap).collect::<Vec<_>>())
    }
}

/// MIG of a representation against each world's latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    pub n: usize,
    pub seed: u64,
    pub mig_a: f64,
    pub mig_b: f64,
    /// `mig_a − mig_b`.
    pub gap: f64,
}

/// Latents binned into [`FACTOR_LEVELS`] quantile levels per dimension.
fn quantize_latents(z: &[Vec<f64>], d: usize) -> Result<FactorMatrix> {
    let cols: Vec<Vec<usize>> =
        (0..d).map(|j| discretize(&z.iter().map(|row| row[j]).collect::<Vec<_>>(), FACTOR_LEVELS)).collect();
    let data = (0..z.len()).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
    FactorMatrix::new(vec![FACTOR_LEVELS; d], data)
}

/// Samples `n` base latents, renders them in world A (identical to world B),
/// applies `representation` to the observations and scores the codes with
/// MIG against `z` and against `ẑ`.
pub fn entanglement_report(
    representation: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    twins: &TwinWorlds,
    n: usize,
    seed: u64,
) -> Result<EntanglementReport> {
    if n < MIN_REPORT_SAMPLES {
        return Err(Error::Validation(format!("entanglement report needs n >= {MIN_REPORT_SAMPLES}, got {n}")));
    }
    let z = twins.sample_base(n, seed);
    let z_hat = twins.rotate(&z);
    let rows = z.iter().map(|row| representation(&twins.observe_a(row))).collect::<Result<Vec<_>>>()?;
    let codes = RepresentationMatrix::from_rows(&rows)?;
    let score = |latents: &[Vec<f64>]| -> Result<f64> {
        mig_from_mi(&discretize_and_mi(&codes, &quantize_latents(latents, twins.d())?, CODE_BINS)?)
    };
    let (mig_a, mig_b) = (score(&z)?, score(&z_hat)?);
    Ok(EntanglementReport { n, seed, mig_a, mig_b, gap: mig_a - mig_b })
}

/// Sample mean and covariance deviations of world B's latents from `N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub n: usize,
    pub max_mean_deviation: f64,
    pub max_cov_deviation: f64,
}

pub fn moment_check(z_hat: &[Vec<f64>]) -> MomentCheck {
    let n = z_hat.len();
    let d = z_hat.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..d).map(|j| z_hat.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov_dev = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            let c = z_hat.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n as f64;
            cov_dev = cov_dev.max((c - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    MomentCheck { n, max_mean_deviation: mean.iter().fold(0.0, |m, v| m.max(v.abs())), max_cov_deviation: cov_dev }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub z: Vec<f64>,
    pub z_hat: Vec<f64>,
}

/// Everything the `impossibility` command writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub rotation: RotationMap,
    pub orthogonality_error: f64,
    pub determinant: f64,
    /// World A and B observations compared on shared base noise.
    pub pushforward_identical: bool,
    pub pushforward_max_abs_diff: f64,
    /// World B latents drawn from independent noise.
    pub moments: MomentCheck,
    /// Code = latents recovered from `x`, aligned with world A.
    pub identity: EntanglementReport,
    /// Code = `R` applied to the recovered latents, aligned with world B.
    pub rotated: EntanglementReport,
    pub scatter: Vec<ScatterPoint>,
}

pub const SCATTER_POINTS: usize = 500;

/// Runs the full demo: random rotation, pushforward and moment checks and
/// MIG for both the axis-aligned and the rotated code.
pub fn run_demo(d: usize, n: usize, seed: u64, angle: Option<f64>) -> Result<DemoReport> {
    let rotation = match angle {
        Some(theta) => {
            RotationMap::from_angles(d, (0..d).flat_map(|i| (i + 1..d).map(move |j| Givens { i, j, theta })).collect())?
        }
        None => make_rotation(d, derive_seed(seed, "rotation"))?,
    };
    let twins = build_twin_worlds(ToyDecoder::new(d, seed)?, rotation)?;
    let shared_seed = derive_seed(seed, "shared-noise");
    let z = twins.sample_base(n, shared_seed);
    let z_hat = twins.rotate(&z);
    let mut identical = true;
    let mut max_diff = 0.0f64;
    for (a, b) in z.iter().zip(&z_hat) {
        let (xa, xb) = (twins.observe_a(a), twins.observe_b(b));
        for (u, v) in xa.iter().zip(&xb) {
            identical &= u.to_bits() == v.to_bits();
            max_diff = max_diff.max((u - v).abs());
        }
    }
    let independent = twins.rotate(&twins.sample_base(n, derive_seed(seed, "independent-noise")));
    let decoder = twins.decoder.clone();
    let recover = |x: &[f64]| decoder.invert(x);
    let rot = twins.rotation.clone();
    let recover_rotated = |x: &[f64]| decoder.invert(x).map(|z| rot.apply(&z));
    let report_seed = derive_seed(seed, "report");
    Ok(DemoReport {
        d,
        n,
        seed,
        orthogonality_error: twins.rotation.orthogonality_error(),
        determinant: twins.rotation.determinant(),
        pushforward_identical: identical,
        pushforward_max_abs_diff: max_diff,
        moments: moment_check(&independent),
        identity: entanglement_report(&recover, &twins, n, report_seed)?,
        rotated: entanglement_report(&recover_rotated, &twins, n, report_seed)?,
        scatter: z
            .iter()
            .zip(&z_hat)
            .take(SCATTER_POINTS)
            .map(|(a, b)| ScatterPoint { z: a.clone(), z_hat: b.clone() })
            .collect(),
        rotation: twins.rotation,
    })
}
