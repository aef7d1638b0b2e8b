use std::fs;
use std::path::Path;

use nalgebra::Matrix4;

use crate::error::{Error, Result};

/// Reads a 4×4 row-major whitespace-separated matrix.
pub fn read_matrix4(path: &Path) -> Result<Matrix4<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix4(&text).map_err(|(line, msg)| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

pub(crate) fn parse_matrix4(text: &str) -> std::result::Result<Matrix4<f64>, (usize, String)> {
    let mut values = Vec::with_capacity(16);
    let mut last_line = 1;
    for (i, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            last_line = i + 1;
            let v: f64 = tok
                .parse()
                .map_err(|_| (i + 1, format!("not a number: {tok:?}")))?;
            values.push(v);
        }
    }
    if values.len() != 16 {
        return Err((
            last_line,
            format!("expected 16 numbers, found {}", values.len()),
        ));
    }
    Ok(Matrix4::from_row_slice(&values))
}

pub fn write_matrix4(m: &Matrix4<f64>, path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:?}", m[(r, c)])).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
