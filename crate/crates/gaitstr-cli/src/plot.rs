//! Raster output for inspection: silhouette frames and skeleton overlays.

use gaitstr::skeleton::{JointSequence, SilhouetteSequence};
use image::{Rgb, RgbImage};

const SCALE: u32 = 4;

/// Upscaled black-and-white rendering of one silhouette frame.
pub fn silhouette_frame(sil: &SilhouetteSequence, frame: usize) -> RgbImage {
    let (h, w) = (64u32, 44u32);
    let mut img = RgbImage::new(w * SCALE, h * SCALE);
    for r in 0..h {
        for c in 0..w {
            let v = if sil.data[[frame, r as usize, c as usize]] == 1 {
                Rgb([255, 255, 255])
            } else {
                Rgb([20, 20, 30])
            };
            for dr in 0..SCALE {
                for dc in 0..SCALE {
                    img.put_pixel(c * SCALE + dc, r * SCALE + dr, v);
                }
            }
        }
    }
    img
}

fn draw_segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1) * 2;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 + t * (b.0 - a.0);
        let y = a.1 + t * (b.1 - a.1);
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (xi + dx, yi + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

fn joint_to_canvas(x: f64, y: f64, size: u32) -> (f64, f64) {
    let half = size as f64 / 2.0;
    let s = size as f64 / 2.6;
    (half + x * s * 0.5, half - y * s * 0.5)
}

/// Skeleton overlay: one frame of the original sequence, optionally with a
/// refined sequence drawn over it in a second color.
pub fn skeleton_overlay(
    original: &JointSequence,
    refined: Option<&JointSequence>,
    frame: usize,
) -> RgbImage {
    let size = 256u32;
    let mut img = RgbImage::from_pixel(size, size, Rgb([250, 250, 250]));
    let mut draw = |joints: &JointSequence, color: Rgb<u8>| {
        for &(p, c) in &joints.topology.edges {
            let a = joint_to_canvas(joints.data[[frame, p, 0]], joints.data[[frame, p, 1]], size);
            let b = joint_to_canvas(joints.data[[frame, c, 0]], joints.data[[frame, c, 1]], size);
            draw_segment(&mut img, a, b, color);
        }
    };
    draw(original, Rgb([60, 90, 200]));
    if let Some(r) = refined {
        draw(r, Rgb([200, 70, 60]));
    }
    img
}
