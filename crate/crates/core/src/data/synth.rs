//! Synthetic dataset: each class is a fixed oriented sinusoid with a
//! distinct frequency, orientation, and phase, plus seeded uniform noise.
//! Classes are separable from raw pixels by construction.

use rand::Rng;

use super::Sample;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::rng::{mix_seed, seeded_rng};
use crate::tensor::Tensor;

/// Class `c` base pattern at unit coordinates (u,v):
/// `0.5 + 0.35 * sin(2*pi*(1.5 + c)*(cos(a)*u + sin(a)*v) + 0.7*c)` with
/// orientation `a = pi*c/num_classes`. Noise is uniform in [-noise, noise],
/// so with noise <= 0.15 every pixel stays inside [0,1] without clamping.
pub fn synth_dataset<E: Element>(
    num_classes: usize,
    per_class: usize,
    size: (usize, usize),
    noise: f64,
    seed: u64,
) -> Result<Vec<Sample<E>>> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 2 classes, got {num_classes}"
        )));
    }
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::Config("synthetic image extents must be >= 1".into()));
    }
    if !(0.0..=0.15).contains(&noise) {
        return Err(Error::Config(format!(
            "noise amplitude {noise} outside [0, 0.15]"
        )));
    }

    let (h, w) = size;
    let mut out = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let angle = std::f64::consts::PI * c as f64 / num_classes as f64;
        let freq = 1.5 + c as f64;
        let phase = 0.7 * c as f64;
        for i in 0..per_class {
            let mut rng = seeded_rng(mix_seed(seed, (c * per_class + i) as u64));
            let mut data = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let u = x as f64 / w as f64;
                    let v = y as f64 / h as f64;
                    let wave = (2.0 * std::f64::consts::PI * freq * (angle.cos() * u + angle.sin() * v)
                        + phase)
                        .sin();
                    let n = if noise > 0.0 {
                        rng.random_range(-noise..=noise)
                    } else {
                        0.0
                    };
                    data.push(E::from_f64(0.5 + 0.35 * wave + n));
                }
            }
            let image = Tensor::from_vec(&[1, h, w], data)?;
            out.push(Sample::new(image, c)?);
        }
    }
    Ok(out)
}
