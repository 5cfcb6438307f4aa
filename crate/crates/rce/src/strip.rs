//! Grayscale PNG strip of rendered frames, left to right.

use std::io::Write;

/// Encodes every `every`-th frame (and always the last) side by side with a
/// one-pixel separator, each pixel scaled up `zoom` times.
pub fn png_strip<W: Write>(out: W, frames: &[Vec<f64>], side: usize, every: usize, zoom: usize) -> Result<(), png::EncodingError> {
    let every = every.max(1);
    let zoom = zoom.max(1);
    let mut picked: Vec<&Vec<f64>> = frames.iter().step_by(every).collect();
    if let Some(last) = frames.last() {
        if (frames.len() - 1) % every != 0 {
            picked.push(last);
        }
    }
    let cell = side * zoom;
    let width = (picked.len() * (cell + 1)).saturating_sub(1).max(1);
    let height = cell.max(1);
    let mut img = vec![128u8; width * height];
    for (k, frame) in picked.iter().enumerate() {
        let x0 = k * (cell + 1);
        for (i, &v) in frame.iter().enumerate().take(side * side) {
            let (r, c) = (i / side, i % side);
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            for dy in 0..zoom {
                let row = &mut img[(r * zoom + dy) * width..][..width];
                row[x0 + c * zoom..x0 + (c + 1) * zoom].fill(g);
            }
        }
    }
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()?.write_image_data(&img)
}
