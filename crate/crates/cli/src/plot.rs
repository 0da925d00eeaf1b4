use std::io::{self, Write};
use std::path::Path;

/// One line per point, two columns, 17 significant digits.
pub fn format_series(series: &[(f64, f64)]) -> io::Result<String> {
    let mut out = String::new();
    for (i, &(x, y)) in series.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("non-finite value in row {i}")));
        }
        out.push_str(&format!("{x:.16e} {y:.16e}\n"));
    }
    Ok(out)
}

pub fn emit_plot_data(series: &[(f64, f64)], path: &Path) -> io::Result<()> {
    let text = format_series(series)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())
}
