//! Deterministic synthetic images shared by unit tests, benches and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::map::FeatureMap;

/// Soft-edged ellipses and blobs confined to the central disc, zero near the border.
pub fn structured(h: usize, w: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = h.min(w) as f64;
    let shapes: Vec<[f64; 6]> = (0..7)
        .map(|_| {
            [
                rng.gen_range(-0.2..0.2) * size,
                rng.gen_range(-0.2..0.2) * size,
                rng.gen_range(0.05..0.16) * size,
                rng.gen_range(0.03..0.1) * size,
                rng.gen_range(0.0..std::f64::consts::PI),
                rng.gen_range(0.2..1.0),
            ]
        })
        .collect();
    let (cx, cy) = (0.5 * (w as f64 - 1.0), 0.5 * (h as f64 - 1.0));
    FeatureMap::from_fn(h, w, |c, r| {
        let (x, y) = (c as f64 - cx, r as f64 - cy);
        let mut v = 0.0;
        for &[bx, by, a, b, ang, amp] in &shapes {
            let (s, co) = ang.sin_cos();
            let (u, w2) = ((x - bx) * co + (y - by) * s, -(x - bx) * s + (y - by) * co);
            let d = ((u / a).powi(2) + (w2 / b).powi(2)).sqrt();
            // ~1 px soft edge
            let edge = ((1.0 - d) * a.min(b)).clamp(-0.5, 0.5) + 0.5;
            v += amp * edge;
        }
        v as f32
    })
}
