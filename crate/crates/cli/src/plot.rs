use std::path::Path;

use anyhow::{Context, Result};
use featpose::metrics::PoseHistogram;
use featpose::FeatureMap;
use image::{Rgb, RgbImage};

const GT_FILL: Rgb<u8> = Rgb([150, 185, 230]);
const EST_LINE: Rgb<u8> = Rgb([215, 95, 20]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);

/// One-channel maps become gray, others use their first three channels.
pub fn save_feature_png(map: &FeatureMap, range: (f32, f32), path: &Path) -> Result<()> {
    let (h, w, c) = map.dims();
    let span = (range.1 - range.0).max(f32::EPSILON);
    let to_u8 = |v: f32| (((v - range.0) / span).clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = map.pixel(y as usize, x as usize);
        if c < 3 {
            let g = to_u8(px[0]);
            Rgb([g, g, g])
        } else {
            Rgb([to_u8(px[0]), to_u8(px[1]), to_u8(px[2])])
        }
    });
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Ground truth as filled bars, the estimate as outlined bars on top.
pub fn save_histogram_overlay(gt: &PoseHistogram, est: &PoseHistogram, path: &Path) -> Result<()> {
    let (w, h, margin) = (480u32, 240u32, 16u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let n = gt.n_bins().max(1) as u32;
    let peak = gt.probs.iter().chain(&est.probs).cloned().fold(1e-12, f64::max);
    let plot_h = (h - 2 * margin) as f64;
    let bar_w = (w - 2 * margin) / n;
    let base = h - margin;
    let height = |p: f64| ((p / peak) * plot_h).round() as u32;

    for (i, &p) in gt.probs.iter().enumerate() {
        let x0 = margin + i as u32 * bar_w;
        for x in x0 + 1..x0 + bar_w {
            for y in base - height(p)..base {
                img.put_pixel(x, y, GT_FILL);
            }
        }
    }
    for (i, &p) in est.probs.iter().enumerate() {
        let x0 = margin + i as u32 * bar_w + 2;
        let x1 = x0 + bar_w.saturating_sub(4).max(1);
        let top = base - height(p);
        for x in x0..=x1 {
            img.put_pixel(x, top, EST_LINE);
        }
        for y in top..base {
            img.put_pixel(x0, y, EST_LINE);
            img.put_pixel(x1, y, EST_LINE);
        }
    }
    for x in margin..w - margin {
        img.put_pixel(x, base, AXIS);
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
