//! Plain-text writers for grids and images.

use std::io::{self, Write};

use nalgebra::DMatrix;

/// Matrix as CSV rows, one row per first index.
pub fn write_csv_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:.10e}", m[(i, j)]))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// 8-bit greyscale PGM of a density on the (psi1, psi2) grid.
/// Columns run along psi1, the top row is the largest psi2; white is zero, black is the maximum.
pub fn write_pgm<W: Write>(mut w: W, rho: &DMatrix<f64>) -> io::Result<()> {
    let (m1, m2) = rho.shape();
    let max = rho.max();
    write!(w, "P5\n{m1} {m2}\n255\n")?;
    let mut bytes = Vec::with_capacity(m1 * m2);
    for b in (0..m2).rev() {
        for a in 0..m1 {
            let v = if max > 0.0 { rho[(a, b)] / max } else { 0.0 };
            bytes.push((255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8);
        }
    }
    w.write_all(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout() {
        let rho = DMatrix::from_fn(3, 2, |a, b| if a == 2 && b == 1 { 1.0 } else { 0.0 });
        let mut out = Vec::new();
        write_pgm(&mut out, &rho).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&out[..header.len()], header);
        assert_eq!(&out[header.len()..], &[255, 255, 0, 255, 255, 255]);
    }

    #[test]
    fn csv_shape() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut out = Vec::new();
        write_csv_matrix(&mut out, &m).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.lines().count(), 2);
        assert!(s.lines().next().unwrap().starts_with("1.0000000000e0,"));
    }
}
