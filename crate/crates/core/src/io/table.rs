use std::io::Write;
use std::path::Path;

use crate::error::{GeoError, Result};

/// A numeric table with a header row, written as CSV, optionally led by a
/// text label column.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    label_column: Option<String>,
    labels: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

/// Shortest decimal text that parses back to the same double.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            label_column: None,
            labels: Vec::new(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    /// A table whose first column holds text labels.
    pub fn labelled<S: Into<String>>(
        label_column: &str,
        header: impl IntoIterator<Item = S>,
    ) -> Self {
        Table {
            label_column: Some(label_column.into()),
            ..Table::new(header)
        }
    }

    pub fn push_labelled(&mut self, label: &str, row: Vec<f64>) -> Result<()> {
        if self.label_column.is_none() {
            return Err(GeoError::Shape("table has no label column".into()));
        }
        self.push_row(row)?;
        self.labels.push(label.into());
        Ok(())
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if self.label_column.is_some() {
            return Err(GeoError::Shape("labelled table needs push_labelled".into()));
        }
        self.push_row(row)
    }

    fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(GeoError::Shape(format!(
                "row has {} columns, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| GeoError::Io(e.to_string());
        let lead: Vec<&str> = self.label_column.iter().map(String::as_str).collect();
        w.write_record(
            lead.iter()
                .copied()
                .chain(self.header.iter().map(String::as_str)),
        )
        .map_err(io)?;
        for (k, row) in self.rows.iter().enumerate() {
            let label = self.labels.get(k).cloned();
            w.write_record(
                label
                    .into_iter()
                    .chain(row.iter().map(|v| format_number(*v))),
            )
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| GeoError::Io(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| GeoError::Io(format!("{}: {e}", path.display())))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Column names `prefix_0 … prefix_{d−1}`, or `x, y` in two dimensions when
/// `prefix` is `x`.
pub fn coordinate_columns(prefix: &str, d: usize) -> Vec<String> {
    if prefix == "x" && d == 2 {
        return vec!["x".into(), "y".into()];
    }
    (0..d).map(|i| format!("{prefix}_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [
            0.0,
            -0.0,
            1.0,
            0.1,
            1e-7,
            -3.25e-300,
            123456.789,
            1e20,
            f64::MIN_POSITIVE,
            std::f64::consts::PI,
        ] {
            assert_eq!(
                format_number(v).parse::<f64>().unwrap().to_bits(),
                v.to_bits(),
                "{v}"
            );
        }
        assert_eq!(format_number(2.0), "2");
        assert_eq!(format_number(1e-7), "1e-7");
    }

    #[test]
    fn writes_header_and_rows() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec![1.0, 0.5]).unwrap();
        t.push(vec![-2.0, 1e-9]).unwrap();
        assert_eq!(t.to_csv_string().unwrap(), "a,b\n1,0.5\n-2,1e-9\n");
        assert!(t.push(vec![1.0]).is_err());
        let mut l = Table::labelled("curve", ["length"]);
        l.push_labelled("linear", vec![2.5]).unwrap();
        assert!(l.push(vec![1.0]).is_err());
        assert_eq!(l.to_csv_string().unwrap(), "curve,length\nlinear,2.5\n");
    }

    #[test]
    fn coordinate_names() {
        assert_eq!(coordinate_columns("x", 2), ["x", "y"]);
        assert_eq!(coordinate_columns("v", 2), ["v_0", "v_1"]);
        assert_eq!(coordinate_columns("x", 3), ["x_0", "x_1", "x_2"]);
    }
}
