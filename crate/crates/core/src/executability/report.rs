use std::io::Write;

use super::GridAnalysis;

/// Red at `π`, green at `0`, gray for `NaN`.
pub fn angle_color(angle: f64) -> [u8; 3] {
    if angle.is_nan() {
        return [128, 128, 128];
    }
    let t = (angle / std::f64::consts::PI).clamp(0.0, 1.0);
    [(255.0 * t).round() as u8, (255.0 * (1.0 - t)).round() as u8, 0]
}

/// One row per cell: `x1,x2,independent,orthogonal,controllable,executable,angle_i_j...`.
pub fn write_grid_csv<W: Write>(grid: &GridAnalysis, mut out: W) -> std::io::Result<()> {
    write!(out, "x1,x2,independent,orthogonal,controllable,executable")?;
    for pair in &grid.angles {
        write!(out, ",angle_{}_{}", pair.i, pair.j)?;
    }
    writeln!(out)?;
    for (k, r) in grid.reports.iter().enumerate() {
        let (x, y) = grid.point(k);
        write!(
            out,
            "{x},{y},{},{},{},{}",
            r.independent as u8, r.orthogonal as u8, r.concurrently_controllable as u8, r.concurrently_executable as u8
        )?;
        for pair in &grid.angles {
            write!(out, ",{}", pair.values[k])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Binary PPM of one angle field; the top image row is the largest `x2`.
pub fn write_angle_ppm<W: Write>(grid: &GridAnalysis, pair: usize, mut out: W) -> std::io::Result<()> {
    let (nx, ny) = (grid.xs.len(), grid.ys.len());
    write!(out, "P6\n{nx} {ny}\n255\n")?;
    let values = &grid.angles[pair].values;
    let mut bytes = Vec::with_capacity(3 * nx * ny);
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            bytes.extend_from_slice(&angle_color(values[grid.index(ix, iy)]));
        }
    }
    out.write_all(&bytes)
}

/// All-green image for grids without a task pair.
pub fn write_placeholder_ppm<W: Write>(width: usize, height: usize, mut out: W) -> std::io::Result<()> {
    write!(out, "P6\n{width} {height}\n255\n")?;
    out.write_all(&[0, 255, 0].repeat(width * height))
}
