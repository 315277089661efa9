//! File emitters: PGM/PPM sample grids, scatter CSV, and the training log.
//! Every byte written is a function of the inputs so reruns reproduce
//! artifacts exactly (the training log's elapsed column is opt-in wall
//! time for that reason).

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::diffcore::Tensor;
use crate::training::LossReport;

use super::HarnessError;

/// Format with up to `digits` significant digits, trailing zeros trimmed.
pub fn format_sig(x: f64, digits: i32) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else { format!("{x}") };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - magnitude);
    let rounded = (x * factor).round() / factor;
    format!("{rounded}")
}

/// Map a tanh-range value to a pixel byte.
fn to_byte(v: f32) -> u8 {
    let scaled = ((v as f64 + 1.0) / 2.0 * 255.0).round();
    scaled.clamp(0.0, 255.0) as u8
}

/// Write a grid of image samples as binary PGM (1 channel) or PPM
/// (3 channels). `samples` is [N, C, H, W] with N >= rows * cols; sample
/// `r * cols + c` lands at grid cell (r, c), so callers emitting one class
/// per row pass samples in class-major order.
pub fn emit_sample_grid(
    samples: &Tensor<f32>,
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<(), HarnessError> {
    if samples.shape.len() != 4 {
        return Err(HarnessError::Emit(format!(
            "sample grid needs [N,C,H,W] images, got {:?}",
            samples.shape
        )));
    }
    let (n, c, h, w) = (
        samples.shape[0],
        samples.shape[1],
        samples.shape[2],
        samples.shape[3],
    );
    if rows * cols > n {
        return Err(HarnessError::Emit(format!(
            "grid of {rows}x{cols} needs {} samples, got {n}",
            rows * cols
        )));
    }
    if c != 1 && c != 3 {
        return Err(HarnessError::Emit(format!("grids support 1 or 3 channels, got {c}")));
    }
    let grid_w = cols * w;
    let grid_h = rows * h;
    let mut bytes = Vec::with_capacity(grid_w * grid_h * c);
    let header = if c == 1 {
        format!("P5\n{grid_w} {grid_h}\n255\n")
    } else {
        format!("P6\n{grid_w} {grid_h}\n255\n")
    };
    bytes.extend_from_slice(header.as_bytes());
    let per = c * h * w;
    for gy in 0..grid_h {
        let (r, y) = (gy / h, gy % h);
        for gx in 0..grid_w {
            let (col, x) = (gx / w, gx % w);
            let base = (r * cols + col) * per;
            for ch in 0..c {
                bytes.push(to_byte(samples.data[base + (ch * h + y) * w + x]));
            }
        }
    }
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Write labeled 2-D points as `x,y,class` CSV with 6 significant digits.
pub fn emit_scatter(points: &[(f64, f64, usize)], path: &Path) -> Result<(), HarnessError> {
    let mut out = String::from("x,y,class\n");
    for &(x, y, class) in points {
        out.push_str(&format!("{},{},{}\n", format_sig(x, 6), format_sig(y, 6), class));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse a scatter CSV back into points (testing and inspection).
pub fn read_scatter(path: &Path) -> Result<Vec<(f64, f64, usize)>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "x,y,class" {
                return Err(HarnessError::Emit(format!("unexpected scatter header `{line}`")));
            }
            continue;
        }
        let mut parts = line.split(',');
        let x = parts.next().and_then(|s| s.parse().ok());
        let y = parts.next().and_then(|s| s.parse().ok());
        let class = parts.next().and_then(|s| s.parse().ok());
        match (x, y, class) {
            (Some(x), Some(y), Some(class)) => out.push((x, y, class)),
            _ => return Err(HarnessError::Emit(format!("bad scatter row `{line}`"))),
        }
    }
    Ok(out)
}

pub const TRAIN_LOG_HEADER: &str = "step,loss_d,loss_g,kl,source_term,class_term,elapsed_s";

/// Append-only training log. With `wall_clock` off (the default) the
/// elapsed column is written as 0.000 so identical runs produce
/// byte-identical files; switch it on for human-facing timing at the cost
/// of that guarantee.
pub struct TrainLog {
    file: fs::File,
    wall_clock: bool,
    started: Instant,
}

impl TrainLog {
    pub fn create(path: &Path, wall_clock: bool) -> Result<Self, HarnessError> {
        let mut file = fs::File::create(path)?;
        writeln!(file, "{TRAIN_LOG_HEADER}")?;
        Ok(TrainLog { file, wall_clock, started: Instant::now() })
    }

    pub fn append(&mut self, report: &LossReport) -> Result<(), HarnessError> {
        let elapsed = if self.wall_clock {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        writeln!(
            self.file,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}",
            report.step,
            report.loss_d,
            report.loss_g,
            report.kl,
            report.source_term,
            report.class_term,
            elapsed
        )?;
        Ok(())
    }
}
