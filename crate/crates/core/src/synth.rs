//! Seeded synthetic textures for smoke tests and demos.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthClass {
    /// Diagonal stripes with jittered angle, period and phase.
    Sinusoid,
    /// Axis-aligned checkerboard with jittered cell size and offset.
    Checkerboard,
    /// Independent uniform noise.
    Noise,
}

impl SynthClass {
    pub const ALL: [SynthClass; 3] = [
        SynthClass::Sinusoid,
        SynthClass::Checkerboard,
        SynthClass::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthClass::Sinusoid => "sinusoid",
            SynthClass::Checkerboard => "checkerboard",
            SynthClass::Noise => "noise",
        }
    }
}

/// One `size x size` texture; the same `(class, size, seed)` always gives the same image.
pub fn synth_texture(class: SynthClass, size: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match class {
        SynthClass::Sinusoid => {
            let angle = PI / 4.0 + rng.gen_range(-0.2..0.2);
            let period = rng.gen_range(6.0..10.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let (c, s) = (angle.cos(), angle.sin());
            GrayImage::from_fn(size, size, |x, y| {
                let t = (x as f64 * c + y as f64 * s) * 2.0 * PI / period + phase;
                0.5 + 0.4 * t.sin() + rng.gen_range(-0.05..0.05)
            })
        }
        SynthClass::Checkerboard => {
            let cell = rng.gen_range(8..13);
            let (ox, oy) = (rng.gen_range(0..cell), rng.gen_range(0..cell));
            GrayImage::from_fn(size, size, |x, y| {
                let on = ((x + ox) / cell + (y + oy) / cell) % 2 == 0;
                (if on { 0.8 } else { 0.2 }) + rng.gen_range(-0.05..0.05)
            })
        }
        SynthClass::Noise => GrayImage::from_fn(size, size, |_, _| rng.gen_range(0.0..1.0)),
    }
}

/// `per_class` images of each class, interleaved by class, with labels.
/// Image `i` of class `c` uses seed `seed + 1000 c + i`.
pub fn synth_dataset(per_class: usize, size: usize, seed: u64) -> Vec<(GrayImage, usize)> {
    let mut out = Vec::with_capacity(per_class * SynthClass::ALL.len());
    for i in 0..per_class {
        for (c, &class) in SynthClass::ALL.iter().enumerate() {
            out.push((
                synth_texture(class, size, seed + 1000 * c as u64 + i as u64),
                c,
            ));
        }
    }
    out
}
