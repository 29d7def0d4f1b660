//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texbank::synth::{synth_texture, SynthClass};
use texbank::vocab::{fit_gmm, kmeans, GmmParams, KmeansParams};
use texbank::{Codebook, DescriptorSample, GmmModel, GrayImage, Matrix};

/// `n` random descriptors of dimension `d`.
pub fn random_sample(n: usize, d: usize, seed: u64) -> DescriptorSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DescriptorSample::unpositioned(Matrix::from_vec(n, d, data).expect("shape matches"))
}

/// A `k`-word codebook fitted on random descriptors.
pub fn codebook(k: usize, d: usize) -> Codebook {
    let s = random_sample(20 * k, d, 1);
    let params = KmeansParams {
        k,
        max_iters: 10,
        seed: 0,
    };
    kmeans(s.descriptors(), &params)
        .expect("k-means fits")
        .codebook
}

/// A `k`-component diagonal GMM fitted on random descriptors.
pub fn gmm(k: usize, d: usize) -> GmmModel {
    let s = random_sample(20 * k, d, 2);
    let params = GmmParams {
        k,
        max_iters: 10,
        tol: 1e-6,
        seed: 0,
    };
    fit_gmm(s.descriptors(), &params).expect("EM fits").model
}

pub fn texture(size: usize) -> GrayImage {
    synth_texture(SynthClass::Checkerboard, size, 0)
}
