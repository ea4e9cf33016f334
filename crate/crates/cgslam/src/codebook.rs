//! Residual vector quantization of per-Gaussian geometry (log-scales and
//! rotations) plus the covariance-similarity analysis used to justify it.

use nalgebra::{DVector, Matrix3, Vector3, Vector4};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{covariance_from_rs, GaussianMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualCodebook {
    pub dim: usize,
    /// `codes[stage][index]` of length `dim`.
    pub codes: Vec<Vec<DVector<f64>>>,
}

impl ResidualCodebook {
    pub fn stages(&self) -> usize {
        self.codes.len()
    }

    pub fn codes_per_stage(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }
}

/// Trained book plus the mean squared residual-to-code distance per stage.
#[derive(Debug, Clone)]
pub struct TrainedCodebook {
    pub book: ResidualCodebook,
    pub stage_losses: Vec<f64>,
}

/// Greedy stage-by-stage encoding: each stage picks the code closest to the
/// running residual (ties to the lowest index). Returns the indices and the
/// summed reconstruction.
pub fn rvq_encode(vector: &DVector<f64>, book: &ResidualCodebook) -> Result<(Vec<usize>, DVector<f64>)> {
    if vector.len() != book.dim {
        return Err(Error::InvalidInput(format!(
            "vector dim {} does not match codebook dim {}",
            vector.len(),
            book.dim
        )));
    }
    let mut recon = DVector::zeros(book.dim);
    let mut indices = Vec::with_capacity(book.stages());
    for stage in &book.codes {
        let residual = vector - &recon;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, code) in stage.iter().enumerate() {
            let d = (&residual - code).norm_squared();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        recon += &stage[best];
        indices.push(best);
    }
    Ok((indices, recon))
}

/// Sum of the indexed code vectors across stages.
pub fn rvq_decode(indices: &[usize], book: &ResidualCodebook) -> Result<DVector<f64>> {
    if indices.len() != book.stages() {
        return Err(Error::InvalidInput(format!(
            "{} indices for {} stages",
            indices.len(),
            book.stages()
        )));
    }
    let mut out = DVector::zeros(book.dim);
    for (stage, &k) in book.codes.iter().zip(indices) {
        if k >= stage.len() {
            return Err(Error::InvalidIndex {
                index: k,
                count: stage.len(),
            });
        }
        out += &stage[k];
    }
    Ok(out)
}

/// Train a residual codebook stage by stage: seeded uniform sampling of P
/// residuals as initialization, then k-means (argmin assignment, centroid
/// update). Codebook fitting never modifies the input vectors.
pub fn rvq_train(
    vectors: &[DVector<f64>],
    stages: usize,
    codes_per_stage: usize,
    iterations: usize,
    seed: u64,
) -> Result<TrainedCodebook> {
    if vectors.is_empty() {
        return Err(Error::InsufficientData("rvq_train needs at least one vector".into()));
    }
    if stages == 0 || codes_per_stage == 0 {
        return Err(Error::InvalidParameter(
            "rvq_train needs stages >= 1 and codes_per_stage >= 1".into(),
        ));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidInput("rvq_train vectors have mixed dimensions".into()));
    }
    // At least one centroid update guarantees each stage's loss does not
    // exceed the previous stage's (centroids beat the zero vector per cluster).
    let iterations = iterations.max(1);
    let n = vectors.len();

    let mut residuals: Vec<DVector<f64>> = vectors.to_vec();
    let mut codes = Vec::with_capacity(stages);
    let mut stage_losses = Vec::with_capacity(stages);
    for stage in 0..stages {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(stage as u64));
        let mut stage_codes: Vec<DVector<f64>> = if codes_per_stage <= n {
            sample(&mut rng, n, codes_per_stage)
                .into_iter()
                .map(|i| residuals[i].clone())
                .collect()
        } else {
            eprintln!(
                "rvq_train: stage {stage} has {n} vectors for {codes_per_stage} codes; padding by repetition"
            );
            (0..codes_per_stage).map(|k| residuals[k % n].clone()).collect()
        };

        let assign = |codes: &[DVector<f64>], r: &DVector<f64>| -> usize {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, c) in codes.iter().enumerate() {
                let d = (r - c).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        };

        let mut assignments = vec![0usize; n];
        for _ in 0..iterations {
            for (a, r) in assignments.iter_mut().zip(&residuals) {
                *a = assign(&stage_codes, r);
            }
            let mut sums = vec![DVector::<f64>::zeros(dim); codes_per_stage];
            let mut counts = vec![0usize; codes_per_stage];
            for (&a, r) in assignments.iter().zip(&residuals) {
                sums[a] += r;
                counts[a] += 1;
            }
            for k in 0..codes_per_stage {
                // Empty clusters keep their previous code.
                if counts[k] > 0 {
                    stage_codes[k] = &sums[k] / counts[k] as f64;
                }
            }
        }

        let mut loss = 0.0;
        for (a, r) in assignments.iter_mut().zip(residuals.iter_mut()) {
            *a = assign(&stage_codes, r);
            loss += (&*r - &stage_codes[*a]).norm_squared();
            *r -= &stage_codes[*a];
        }
        stage_losses.push(loss / n as f64);
        codes.push(stage_codes);
    }

    Ok(TrainedCodebook {
        book: ResidualCodebook { dim, codes },
        stage_losses,
    })
}

/// Divergence of two zero-mean Gaussians by the formula
/// `1/(2p)·tr(Σ₁⁻¹Σ₂) − 1/2 + 1/(2p)·ln det(Σ₁⁻¹Σ₂)` with p = 3. Note the
/// sign of the log-determinant term makes this differ from the textbook
/// KL divergence; small negative values are possible and expected.
pub fn kl_divergence(sigma1: &Matrix3<f64>, sigma2: &Matrix3<f64>) -> Result<f64> {
    let p = 3.0;
    let chol1 = sigma1.cholesky().ok_or(Error::InvalidCovariance)?;
    let chol2 = sigma2.cholesky().ok_or(Error::InvalidCovariance)?;
    let s1_inv_s2 = chol1.solve(sigma2);
    let trace = s1_inv_s2.trace();
    let log_det = chol2.determinant().ln() - chol1.determinant().ln();
    Ok(trace / (2.0 * p) - 0.5 + log_det / (2.0 * p))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    /// Symmetric band half-widths on the divergence value.
    pub band_limits: Vec<f64>,
    /// Fraction of sampled pairs with |D| ≤ each band limit; nondecreasing.
    pub cumulative_fractions: Vec<f64>,
    pub sample_count: usize,
}

pub const SIMILARITY_BANDS: [f64; 4] = [0.025, 0.05, 0.075, 0.10];

/// Sample random ordered pairs of distinct primitives and histogram the
/// divergence of their world covariances into the standard bands.
pub fn similarity_histogram(
    map: &GaussianMap,
    pair_samples: usize,
    seed: u64,
) -> Result<SimilarityHistogram> {
    if map.len() < 2 {
        return Err(Error::InsufficientData(
            "similarity histogram needs at least two primitives".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let covs: Vec<Matrix3<f64>> = map
        .primitives
        .iter()
        .map(|p| covariance_from_rs(&p.rotation_raw, &p.scale()))
        .collect::<Result<_>>()?;
    let mut in_band = [0usize; SIMILARITY_BANDS.len()];
    use rand::Rng;
    for _ in 0..pair_samples {
        let i = rng.gen_range(0..map.len());
        let j = loop {
            let j = rng.gen_range(0..map.len());
            if j != i {
                break j;
            }
        };
        let d = kl_divergence(&covs[i], &covs[j])?;
        for (b, &limit) in SIMILARITY_BANDS.iter().enumerate() {
            if d.abs() <= limit {
                in_band[b] += 1;
            }
        }
    }
    Ok(SimilarityHistogram {
        band_limits: SIMILARITY_BANDS.to_vec(),
        cumulative_fractions: in_band
            .iter()
            .map(|&c| c as f64 / pair_samples as f64)
            .collect(),
        sample_count: pair_samples,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedGeometry {
    /// Row-major N×L code indices.
    pub scale_indices: Vec<u16>,
    pub rotation_indices: Vec<u16>,
    pub scale_book: ResidualCodebook,
    pub rotation_book: ResidualCodebook,
}

impl EncodedGeometry {
    pub fn stages(&self) -> usize {
        self.scale_book.stages()
    }

    pub fn len(&self) -> usize {
        if self.stages() == 0 {
            0
        } else {
            self.scale_indices.len() / self.stages()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn indices_of(&self, flat: &[u16], n: usize) -> Vec<usize> {
        let l = self.stages();
        flat[n * l..(n + 1) * l].iter().map(|&i| i as usize).collect()
    }

    /// Decoded raw log-scale for primitive `n`.
    pub fn decode_scale(&self, n: usize) -> Result<Vector3<f64>> {
        let v = rvq_decode(&self.indices_of(&self.scale_indices, n), &self.scale_book)?;
        Ok(Vector3::new(v[0], v[1], v[2]))
    }

    /// Decoded rotation for primitive `n`; callers normalize on use.
    pub fn decode_rotation(&self, n: usize) -> Result<Vector4<f64>> {
        let v = rvq_decode(&self.indices_of(&self.rotation_indices, n), &self.rotation_book)?;
        Ok(Vector4::new(v[0], v[1], v[2], v[3]))
    }

    /// Overwrite the map's geometry with the decoded attributes.
    pub fn apply_to_map(&self, map: &mut GaussianMap) -> Result<()> {
        if map.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "encoded geometry covers {} primitives, map has {}",
                self.len(),
                map.len()
            )));
        }
        for n in 0..map.len() {
            map.primitives[n].scale_raw = self.decode_scale(n)?;
            map.primitives[n].rotation_raw = self.decode_rotation(n)?;
        }
        Ok(())
    }
}

/// Train scale and rotation codebooks on the map's current attributes and
/// encode every primitive. Log-scales are quantized directly (decoded scales
/// stay positive through exp); rotations are normalized before encoding and
/// renormalized on use.
pub fn encode_map_geometry(
    map: &GaussianMap,
    stages: usize,
    codes_per_stage: usize,
    iterations: usize,
    seed: u64,
) -> Result<(EncodedGeometry, Vec<f64>, Vec<f64>)> {
    if map.is_empty() {
        return Err(Error::InsufficientData("cannot encode an empty map".into()));
    }
    let scale_vecs: Vec<DVector<f64>> = map
        .primitives
        .iter()
        .map(|p| DVector::from_column_slice(p.scale_raw.as_slice()))
        .collect();
    let rot_vecs: Vec<DVector<f64>> = map
        .primitives
        .iter()
        .map(|p| DVector::from_column_slice(p.rotation_unit().as_slice()))
        .collect();
    let scale_trained = rvq_train(&scale_vecs, stages, codes_per_stage, iterations, seed)?;
    let rot_trained = rvq_train(&rot_vecs, stages, codes_per_stage, iterations, seed ^ 0x5eed)?;

    let mut scale_indices = Vec::with_capacity(map.len() * stages);
    let mut rotation_indices = Vec::with_capacity(map.len() * stages);
    for n in 0..map.len() {
        let (si, _) = rvq_encode(&scale_vecs[n], &scale_trained.book)?;
        let (ri, _) = rvq_encode(&rot_vecs[n], &rot_trained.book)?;
        scale_indices.extend(si.into_iter().map(|i| i as u16));
        rotation_indices.extend(ri.into_iter().map(|i| i as u16));
    }
    Ok((
        EncodedGeometry {
            scale_indices,
            rotation_indices,
            scale_book: scale_trained.book,
            rotation_book: rot_trained.book,
        },
        scale_trained.stage_losses,
        rot_trained.stage_losses,
    ))
}
