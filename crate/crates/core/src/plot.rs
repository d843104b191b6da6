//! Minimal line plots rasterized to images, and two-column CSV output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

const MARGIN: usize = 8;
const AXIS: [f64; 3] = [0.0, 0.0, 0.0];
const TICK: [f64; 3] = [0.8, 0.8, 0.8];

/// Polyline through `points` on a white `width×height` canvas, with the data
/// range mapped to the area inside a fixed margin and the axes drawn along the
/// bottom and left edges. Light grid lines mark quarters of each range.
pub fn line_plot(points: &[(f64, f64)], width: usize, height: usize, color: [f64; 3]) -> Result<Image> {
    if width <= 2 * MARGIN + 1 || height <= 2 * MARGIN + 1 {
        return Err(Error::Param(format!("plot of {width}x{height} is too small")));
    }
    if points.is_empty() || points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Param("plot needs finite points".into()));
    }
    let (x0, x1) = bounds(points.iter().map(|p| p.0));
    let (y0, y1) = bounds(points.iter().map(|p| p.1));
    let (w, h) = ((width - 2 * MARGIN - 1) as f64, (height - 2 * MARGIN - 1) as f64);
    let to_px = |(x, y): (f64, f64)| {
        (
            MARGIN as f64 + (x - x0) / (x1 - x0) * w,
            (height - MARGIN - 1) as f64 - (y - y0) / (y1 - y0) * h,
        )
    };

    let mut img = Image::solid(width, height, [1.0; 3]);
    for q in 1..4 {
        let gx = MARGIN + (w * q as f64 / 4.0).round() as usize;
        let gy = height - MARGIN - 1 - (h * q as f64 / 4.0).round() as usize;
        for y in MARGIN..height - MARGIN {
            img.pixel_mut(gx, y).copy_from_slice(&TICK);
        }
        for x in MARGIN..width - MARGIN {
            img.pixel_mut(x, gy).copy_from_slice(&TICK);
        }
    }
    for x in MARGIN..width - MARGIN {
        img.pixel_mut(x, height - MARGIN - 1).copy_from_slice(&AXIS);
    }
    for y in MARGIN..height - MARGIN {
        img.pixel_mut(MARGIN, y).copy_from_slice(&AXIS);
    }

    let mut prev = to_px(points[0]);
    plot_dot(&mut img, prev, color);
    for &p in &points[1..] {
        let next = to_px(p);
        let n = (next.0 - prev.0).abs().max((next.1 - prev.1).abs()).ceil().max(1.0) as usize;
        for k in 1..=n {
            let f = k as f64 / n as f64;
            plot_dot(&mut img, (prev.0 + f * (next.0 - prev.0), prev.1 + f * (next.1 - prev.1)), color);
        }
        prev = next;
    }
    Ok(img)
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn plot_dot(img: &mut Image, (x, y): (f64, f64), color: [f64; 3]) {
    let (x, y) = (x.round(), y.round());
    if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.pixel_mut(x as usize, y as usize).copy_from_slice(&color);
    }
}

/// Writes `header` and one `x,y` row per point.
pub fn write_xy_csv<X: std::fmt::Display, Y: std::fmt::Display>(
    path: impl AsRef<Path>,
    header: &str,
    points: impl IntoIterator<Item = (X, Y)>,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{header}").map_err(io)?;
    for (x, y) in points {
        writeln!(w, "{x},{y}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_land_in_corners() {
        let red = [1.0, 0.0, 0.0];
        let img = line_plot(&[(0.0, 0.0), (1.0, 1.0)], 64, 48, red).unwrap();
        assert_eq!(img.pixel(MARGIN, 48 - MARGIN - 1), &red);
        assert_eq!(img.pixel(64 - MARGIN - 1, MARGIN), &red);
        assert_eq!(img.pixel(1, 1), &[1.0; 3]);
    }

    #[test]
    fn flat_series_is_drawn_mid_height() {
        let c = [0.0, 0.0, 1.0];
        let img = line_plot(&[(0.0, 2.0), (5.0, 2.0)], 40, 41, c).unwrap();
        assert_eq!(img.pixel(20, 20), &c);
    }

    #[test]
    fn rejects_empty_and_tiny() {
        assert!(line_plot(&[], 64, 64, [0.0; 3]).is_err());
        assert!(line_plot(&[(0.0, 0.0)], 10, 64, [0.0; 3]).is_err());
    }
}
