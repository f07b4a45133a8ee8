//! Static loss-curve plots drawn straight into a pixel buffer.

use std::path::Path;

use dfmsd::metrics::MetricsRecord;
use dfmsd::{Error, Result};
use image::{Rgb, RgbImage};

const W: u32 = 640;
const H: u32 = 360;
const MARGIN: u32 = 30;

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Total (blue) and detection (red) loss per optimizer step, with grey
/// verticals at stage boundaries. The y axis spans the observed range.
pub fn loss_curve(records: &[MetricsRecord]) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let axis = Rgb([90, 90, 90]);
    line(&mut img, (MARGIN as i64, MARGIN as i64), (MARGIN as i64, (H - MARGIN) as i64), axis);
    line(&mut img, (MARGIN as i64, (H - MARGIN) as i64), ((W - MARGIN) as i64, (H - MARGIN) as i64), axis);
    if records.is_empty() {
        return img;
    }
    let vals = records.iter().flat_map(|r| [r.loss.total, r.loss.gt]).filter(|v| v.is_finite());
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = records.len().max(2) - 1;
    let px = |i: usize| MARGIN as i64 + (i as f64 / n as f64 * (W - 2 * MARGIN) as f64).round() as i64;
    let py = |v: f64| (H - MARGIN) as i64 - ((v - lo) / span * (H - 2 * MARGIN) as f64).round() as i64;

    for (i, pair) in records.windows(2).enumerate() {
        if pair[1].stage != pair[0].stage {
            line(&mut img, (px(i + 1), MARGIN as i64), (px(i + 1), (H - MARGIN) as i64), Rgb([200, 200, 200]));
        }
    }
    for (series, color) in [(0, Rgb([200, 40, 40])), (1, Rgb([30, 80, 200]))] {
        let pick = |r: &MetricsRecord| if series == 0 { r.loss.gt } else { r.loss.total };
        for (i, pair) in records.windows(2).enumerate() {
            let (a, b) = (pick(&pair[0]), pick(&pair[1]));
            if a.is_finite() && b.is_finite() {
                line(&mut img, (px(i), py(a)), (px(i + 1), py(b)), color);
            }
        }
    }
    img
}

pub fn save_loss_curve(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    loss_curve(records).save(path).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    })
}
