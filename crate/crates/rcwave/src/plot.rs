//! Minimal PNG rendering: heat maps for spectrogram-space diagnostics and
//! stacked area charts for the per-resolution contribution series.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Dark-blue -> teal -> yellow ramp, approximating the usual sequential
/// colormaps without carrying a lookup table.
fn colormap(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * v - 0.4).clamp(0.0, 1.0)) as u8;
    let g = (255.0 * (1.4 * v).clamp(0.0, 1.0).powf(1.2)) as u8;
    let b = (255.0 * (0.35 + 0.9 * (0.5 - (v - 0.35).abs()).max(0.0))) as u8;
    Rgb([r, g, b])
}

const SERIES_COLORS: [Rgb<u8>; 4] = [
    Rgb([68, 119, 170]),
    Rgb([102, 204, 238]),
    Rgb([34, 136, 51]),
    Rgb([204, 187, 68]),
];

/// Render a matrix as a heat map. Row 0 is drawn at the bottom so
/// spectrogram-like inputs read with frequency increasing upward.
pub fn save_heatmap(values: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = values.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("empty matrix for heatmap".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = (hi - lo).max(1e-12);
    // upscale small matrices so the panels stay readable
    let sx = (800 / cols).clamp(1, 8) as u32;
    let sy = (400 / rows).clamp(1, 8) as u32;
    let (w, h) = (cols as u32 * sx, rows as u32 * sy);
    let mut img = RgbImage::new(w, h);
    for (py, px, pixel) in img.enumerate_pixels_mut().map(|(x, y, p)| (y, x, p)) {
        let r = rows - 1 - (py / sy) as usize;
        let c = (px / sx) as usize;
        *pixel = colormap((values[(r, c)] - lo) / span);
    }
    save_png(&img, path)
}

/// 3x5 bitmap glyphs for axis labels.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '%' => [0b101, 0b001, 0b010, 0b100, 0b101],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        _ => [0; 5],
    }
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        let g = glyph(ch);
        for (ry, row) in g.iter().enumerate() {
            for rx in 0..3 {
                if row & (0b100 >> rx) != 0 {
                    let (px, py) = (cx + rx, y + ry as u32);
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, color);
                    }
                }
            }
        }
        cx += 4;
    }
}

/// Stacked area chart of per-epoch percentage shares (each row of
/// `series` is one epoch entry; columns are the stacked components).
pub fn save_stacked_shares(
    epochs: &[usize],
    series: &[Vec<f64>],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if series.is_empty() || series[0].is_empty() {
        return Err(Error::InvalidArgument("empty contribution series".into()));
    }
    let n = series.len();
    let k = series[0].len();
    let (w, h) = (640u32, 360u32);
    let (ml, mr, mt, mb) = (30u32, 10u32, 10u32, 18u32);
    let plot_w = (w - ml - mr) as f64;
    let plot_h = (h - mt - mb) as f64;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for px in 0..(w - ml - mr) {
        let f = px as f64 / plot_w.max(1.0);
        let idx = ((f * (n.saturating_sub(1)) as f64).round() as usize).min(n - 1);
        let mut acc = 0.0;
        for comp in 0..k {
            let top = acc + series[idx][comp];
            let y0 = mt as f64 + plot_h * (1.0 - top / 100.0);
            let y1 = mt as f64 + plot_h * (1.0 - acc / 100.0);
            for py in y0.max(mt as f64) as u32..=(y1.min((h - mb) as f64) as u32) {
                img.put_pixel(ml + px, py, SERIES_COLORS[comp % SERIES_COLORS.len()]);
            }
            acc = top;
        }
    }
    let axis = Rgb([0, 0, 0]);
    for px in ml..(w - mr) {
        img.put_pixel(px, h - mb, axis);
    }
    for py in mt..(h - mb) {
        img.put_pixel(ml, py, axis);
    }
    for (frac, label) in [(0.0, "100"), (0.5, "50"), (1.0, "0")] {
        let y = mt + (plot_h * frac) as u32;
        draw_text(&mut img, 2, y.saturating_sub(2), label, axis);
    }
    if let (Some(first), Some(last)) = (epochs.first(), epochs.last()) {
        draw_text(&mut img, ml, h - mb + 3, &first.to_string(), axis);
        let last_s = last.to_string();
        let tw = 4 * last_s.len() as u32;
        draw_text(&mut img, w - mr - tw, h - mb + 3, &last_s, axis);
    }
    save_png(&img, path)
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    {
        let mut cursor = std::io::Cursor::new(&mut bytes);
        img.write_to(&mut cursor, image::ImageFormat::Png)
            .map_err(|e| Error::format(path, format!("png encoding failed: {e}")))?;
    }
    crate::spectral::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_writes_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hm.png");
        let m = Array2::from_shape_fn((20, 30), |(r, c)| (r * c) as f64);
        save_heatmap(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }

    #[test]
    fn stacked_chart_writes_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.png");
        let series = vec![vec![25.0; 4], vec![10.0, 20.0, 30.0, 40.0]];
        save_stacked_shares(&[0, 1], &series, &path).unwrap();
        assert!(path.exists());
    }
}
