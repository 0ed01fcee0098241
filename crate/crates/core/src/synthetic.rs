//! Seeded generators for synthetic embeddings, labelled classes and verification pairs.
//!
//! Everything here is deterministic for a given seed, so tests, demos and the
//! synthetic provider can rely on byte-stable outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::calibration::VerificationPair;
use crate::embedding::{normalize, FaceEmbedding};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// A uniformly distributed direction on the unit sphere.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> FaceEmbedding {
    loop {
        if let Ok(e) = normalize(&gaussian_vector(rng, dim)) {
            return e;
        }
    }
}

/// A unit vector whose cosine similarity to `center` is exactly `similarity`
/// (up to rounding), in a random direction orthogonal to `center`.
pub fn at_similarity<R: Rng + ?Sized>(rng: &mut R, center: &FaceEmbedding, similarity: f64) -> FaceEmbedding {
    let s = similarity.clamp(-1.0, 1.0);
    let c = center.values();
    loop {
        let mut o = gaussian_vector(rng, c.len());
        let proj: f64 = o.iter().zip(c).map(|(a, b)| a * b).sum();
        o.iter_mut().zip(c).for_each(|(x, ci)| *x -= proj * ci);
        let Ok(o) = normalize(&o) else { continue };
        let t = (1.0 - s * s).max(0.0).sqrt();
        let v: Vec<f64> = c.iter().zip(o.values()).map(|(ci, oi)| s * ci + t * oi).collect();
        if let Ok(v) = normalize(&v) {
            return v;
        }
    }
}

/// Labelled raw vectors drawn from isotropic Gaussians around random class centres.
#[derive(Debug, Clone)]
pub struct GaussianClasses {
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    /// Distance of every class centre from the origin.
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl GaussianClasses {
    /// Class centres; these depend only on the seed, not on `per_class`.
    pub fn centres(&self) -> Vec<Vec<f64>> {
        let mut rng = rng(self.seed);
        (0..self.classes)
            .map(|_| {
                random_unit(&mut rng, self.input_dim)
                    .values()
                    .iter()
                    .map(|v| v * self.separation)
                    .collect()
            })
            .collect()
    }

    /// Draws `per_class` samples per class using `sample_seed` for the noise.
    pub fn sample(&self, sample_seed: u64) -> Vec<(Vec<f64>, usize)> {
        let centres = self.centres();
        let mut rng = rng(sample_seed);
        let noise = Normal::new(0.0, self.noise).expect("noise must be finite and non-negative");
        let mut out = Vec::with_capacity(self.classes * self.per_class);
        for _ in 0..self.per_class {
            for (label, centre) in centres.iter().enumerate() {
                let x = centre.iter().map(|c| c + noise.sample(&mut rng)).collect();
                out.push((x, label));
            }
        }
        out
    }
}

/// Verification pairs whose similarities are drawn from two normal
/// distributions, one for matched and one for mismatched pairs.
#[derive(Debug, Clone)]
pub struct PairDistribution {
    pub positive_mean: f64,
    pub positive_std: f64,
    pub negative_mean: f64,
    pub negative_std: f64,
    pub positives: usize,
    pub negatives: usize,
    pub dim: usize,
}

impl PairDistribution {
    pub fn generate(&self, seed: u64) -> Vec<VerificationPair> {
        let mut rng = rng(seed);
        let pos = Normal::new(self.positive_mean, self.positive_std).expect("valid normal");
        let neg = Normal::new(self.negative_mean, self.negative_std).expect("valid normal");
        let mut pairs = Vec::with_capacity(self.positives + self.negatives);
        for i in 0..self.positives + self.negatives {
            let same = i < self.positives;
            let sim: f64 = if same {
                pos.sample(&mut rng)
            } else {
                neg.sample(&mut rng)
            };
            let a = random_unit(&mut rng, self.dim);
            let b = at_similarity(&mut rng, &a, sim);
            pairs.push(VerificationPair::new(a, b, same).expect("same dimension"));
        }
        pairs
    }
}
