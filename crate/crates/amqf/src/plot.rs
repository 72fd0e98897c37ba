//! Minimal raster scatter plots with no font dependencies.
//!
//! Labels use an embedded 5x7 pixel font (uppercase, digits, '.', '-'),
//! which keeps rendering fully deterministic inside containers that ship
//! no system fonts.

use image::{Rgb, RgbImage};

use crate::metrics::logistic_value;

const GLYPH_W: usize = 5;

/// 7 rows of 5-bit masks per glyph, MSB on the left.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'D' => [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110],
        'I' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b11111],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'N' => [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001],
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11110, 0b00001, 0b00001, 0b01110, 0b00001, 0b00001, 0b11110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        '.' => [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100],
        '-' => [0b00000, 0b00000, 0b00000, 0b01110, 0b00000, 0b00000, 0b00000],
        _ => [0; 7],
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        let rows = glyph(ch);
        for (ry, row) in rows.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - gx)) != 0 {
                    put(img, cx + gx as i64, y + ry as i64, color);
                }
            }
        }
        cx += GLYPH_W as i64 + 1;
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn disc(img: &mut RgbImage, x: i64, y: i64, r: i64, color: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, x + dx, y + dy, color);
            }
        }
    }
}

fn line_h(img: &mut RgbImage, x0: i64, x1: i64, y: i64, color: Rgb<u8>) {
    for x in x0.min(x1)..=x0.max(x1) {
        put(img, x, y, color);
    }
}

fn line_v(img: &mut RgbImage, x: i64, y0: i64, y1: i64, color: Rgb<u8>) {
    for y in y0.min(y1)..=y0.max(y1) {
        put(img, x, y, color);
    }
}

/// Scatter plot of `(prediction, mos)` points with an optional fitted
/// logistic curve overlay; axis labels are embedded in the raster.
pub fn render_scatter(points: &[(f64, f64)], curve: Option<[f64; 4]>) -> RgbImage {
    const W: u32 = 640;
    const H: u32 = 480;
    const ML: i64 = 70; // left margin
    const MR: i64 = 20;
    const MT: i64 = 30;
    const MB: i64 = 50;
    let bg = Rgb([255, 255, 255]);
    let axis = Rgb([0, 0, 0]);
    let point_color = Rgb([40, 90, 200]);
    let curve_color = Rgb([200, 50, 40]);

    let mut img = RgbImage::from_pixel(W, H, bg);
    let (x0, x1) = padded_range(points.iter().map(|p| p.0));
    let (y0, y1) = padded_range(points.iter().map(|p| p.1));
    let plot_w = W as i64 - ML - MR;
    let plot_h = H as i64 - MT - MB;
    let to_px = |x: f64| ML + ((x - x0) / (x1 - x0) * plot_w as f64).round() as i64;
    let to_py = |y: f64| MT + plot_h - ((y - y0) / (y1 - y0) * plot_h as f64).round() as i64;

    // Axes with five ticks each.
    line_h(&mut img, ML, ML + plot_w, MT + plot_h, axis);
    line_v(&mut img, ML, MT, MT + plot_h, axis);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let px = to_px(fx);
        line_v(&mut img, px, MT + plot_h, MT + plot_h + 4, axis);
        draw_text(&mut img, px - 14, MT + plot_h + 8, &format!("{fx:.2}"), axis);
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let py = to_py(fy);
        line_h(&mut img, ML - 4, ML, py, axis);
        draw_text(&mut img, ML - 44, py - 3, &format!("{fy:.2}"), axis);
    }
    draw_text(&mut img, ML + plot_w / 2 - 45, MT + plot_h + 24, "PREDICTED SCORE", axis);
    draw_text(&mut img, 8, MT - 18, "MOS", axis);

    if let Some(params) = curve {
        let mut prev: Option<(i64, i64)> = None;
        for i in 0..=300 {
            let x = x0 + (x1 - x0) * i as f64 / 300.0;
            let y = logistic_value(x, &params);
            if !(y0..=y1).contains(&y) {
                prev = None;
                continue;
            }
            let p = (to_px(x), to_py(y));
            if let Some(q) = prev {
                // Steep segments get vertical fill so the curve stays connected.
                let steps = (p.0 - q.0).abs().max((p.1 - q.1).abs()).max(1);
                for s in 0..=steps {
                    let xx = q.0 + (p.0 - q.0) * s / steps;
                    let yy = q.1 + (p.1 - q.1) * s / steps;
                    put(&mut img, xx, yy, curve_color);
                }
            }
            prev = Some(p);
        }
    }

    for &(x, y) in points {
        disc(&mut img, to_px(x), to_py(y), 2, point_color);
    }
    img
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = values.fold((f64::MAX, f64::MIN), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}
