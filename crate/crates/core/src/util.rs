//! Small shared helpers: float formatting for bit-exact artifacts and
//! atomic file writes.

use std::io;
use std::path::Path;

/// Formats a float with 17 significant digits so that serialized artifacts
/// round-trip bit-exactly through text.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // Normalize -0.0 so canonical artifacts do not depend on sign of zero.
        return "0.0e0".to_string();
    }
    format!("{:.16e}", v)
}

/// Parses a float previously written by [`fmt_f64`].
pub fn parse_f64(s: &str) -> Result<f64, std::num::ParseFloatError> {
    s.trim().parse::<f64>()
}

/// Writes `contents` to `path` atomically (write to a sibling temp file,
/// then rename into place).
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact() {
        for &v in &[
            0.0,
            -0.0,
            1.0,
            -1.5,
            std::f64::consts::PI,
            1.0 / 3.0,
            6.626e-34,
            -9.81,
            0.30000000000000004,
        ] {
            let s = fmt_f64(v);
            let back = parse_f64(&s).unwrap();
            assert_eq!(back.to_bits(), if v == 0.0 { 0.0f64.to_bits() } else { v.to_bits() }, "{s}");
        }
    }
}
