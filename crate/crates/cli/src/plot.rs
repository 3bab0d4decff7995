//! Minimal ROC curve rendering to PNG.

use image::{Rgb, RgbImage};

const SIZE: u32 = 520;
const MARGIN: u32 = 40;

fn to_px(v: f64) -> i64 {
    let span = (SIZE - 2 * MARGIN) as f64;
    (MARGIN as f64 + v.clamp(0.0, 1.0) * span) as i64
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y) = (x0, y0);
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as u32) < SIZE && (y as u32) < SIZE {
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

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

/// Draw one ROC curve per trial into a square plot with a chance diagonal.
pub fn roc_png(curves: &[Vec<(f64, f64)>]) -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let grid = Rgb([220, 220, 220]);

    for i in 1..10 {
        let v = i as f64 / 10.0;
        draw_line(&mut img, to_px(v), to_px(0.0), to_px(v), to_px(1.0), grid);
        draw_line(&mut img, to_px(0.0), to_px(v), to_px(1.0), to_px(v), grid);
    }
    // frame
    draw_line(&mut img, to_px(0.0), to_px(0.0), to_px(1.0), to_px(0.0), axis);
    draw_line(&mut img, to_px(0.0), to_px(0.0), to_px(0.0), to_px(1.0), axis);
    draw_line(&mut img, to_px(1.0), to_px(0.0), to_px(1.0), to_px(1.0), axis);
    draw_line(&mut img, to_px(0.0), to_px(1.0), to_px(1.0), to_px(1.0), axis);
    // chance diagonal
    draw_line(&mut img, to_px(0.0), flip(to_px(0.0)), to_px(1.0), flip(to_px(1.0)), Rgb([170, 170, 170]));

    for (k, curve) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        for pair in curve.windows(2) {
            let (x0, y0) = pair[0];
            let (x1, y1) = pair[1];
            draw_line(&mut img, to_px(x0), flip(to_px(y0)), to_px(x1), flip(to_px(y1)), color);
        }
    }
    img
}

fn flip(y: i64) -> i64 {
    SIZE as i64 - y
}
