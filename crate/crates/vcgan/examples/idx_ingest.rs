//! Write a synthetic IDX image/label pair, load it back through the
//! dataset reader, and emit the images as a PGM grid.
//!
//!     cargo run --release --example idx_ingest

use std::path::Path;

use vcgan::harness::{emit_sample_grid, load_idx, write_idx};

fn main() {
    let dir = Path::new("target/examples-out/idx");
    std::fs::create_dir_all(dir).unwrap();
    let images = dir.join("digits.idx3");
    let labels = dir.join("digits.idx1");

    // four 8x8 ramps with distinct intensities
    let mut pixels = Vec::new();
    for img in 0..4u8 {
        for y in 0..8u16 {
            for x in 0..8u16 {
                pixels.push(((y * 8 + x) * 4) as u8 / (img + 1));
            }
        }
    }
    write_idx(&images, &labels, &pixels, &[0, 1, 2, 3], 8, 8).unwrap();

    let data = load_idx(&images, &labels).unwrap();
    println!(
        "loaded {} images of shape {:?}, {} classes, pixels in [{:.2}, {:.2}]",
        data.len(),
        data.sample_shape,
        data.k,
        data.samples.data.iter().cloned().fold(f32::INFINITY, f32::min),
        data.samples.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max),
    );

    let grid = dir.join("digits.pgm");
    emit_sample_grid(&data.samples, 1, 4, &grid).unwrap();
    println!("grid written to {}", grid.display());
}
