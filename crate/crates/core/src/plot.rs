//! Minimal raster line plots (no text), for curve exports.

use image::{Rgb, RgbImage};

const W: u32 = 480;
const H: u32 = 320;
const MARGIN: i64 = 32;

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
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

/// Plots each series of `y ∈ [0, 1]` values against evenly spaced x
/// positions, with light gridlines at every tenth of the y range.
pub fn line_plot(series: &[Vec<f64>]) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let (x_lo, x_hi) = (MARGIN, W as i64 - MARGIN);
    let (y_lo, y_hi) = (H as i64 - MARGIN, MARGIN);
    for k in 0..=10 {
        let y = y_lo + (y_hi - y_lo) * k / 10;
        line(&mut img, (x_lo, y), (x_hi, y), Rgb([225, 225, 225]));
    }
    line(&mut img, (x_lo, y_lo), (x_hi, y_lo), Rgb([0, 0, 0]));
    line(&mut img, (x_lo, y_lo), (x_lo, y_hi), Rgb([0, 0, 0]));
    let palette = [Rgb([31, 119, 180]), Rgb([214, 39, 40]), Rgb([44, 160, 44]), Rgb([148, 103, 189])];
    for (i, ys) in series.iter().enumerate() {
        let c = palette[i % palette.len()];
        let n = ys.len().max(2) as i64 - 1;
        let pts: Vec<(i64, i64)> = ys
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
                (x_lo + (x_hi - x_lo) * k as i64 / n, y_lo + ((y_hi - y_lo) as f64 * v).round() as i64)
            })
            .collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], c);
        }
        for &(x, y) in &pts {
            for d in -2..=2 {
                line(&mut img, (x - 2, y + d), (x + 2, y + d), c);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_deterministic_and_draws_points() {
        let a = line_plot(&[vec![1.0, 0.8, 0.5], vec![0.2, f64::NAN]]);
        assert_eq!(a, line_plot(&[vec![1.0, 0.8, 0.5], vec![0.2, f64::NAN]]));
        assert_eq!(a.dimensions(), (W, H));
        assert_eq!(*a.get_pixel(MARGIN as u32, MARGIN as u32), Rgb([31, 119, 180]));
    }
}
