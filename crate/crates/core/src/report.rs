//! CSV report plumbing shared by campaigns and the CLI.

use std::io::Write;

use crate::error::Result;

/// Fixed 17-significant-digit scientific format so reruns compare byte for byte.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A row of a campaign report.
pub trait CsvRecord {
    const HEADER: &'static [&'static str];
    fn record(&self) -> Vec<String>;
}

pub fn write_csv<W: Write, R: CsvRecord>(rows: &[R], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(R::HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Row(u32, f64);

    impl CsvRecord for Row {
        const HEADER: &'static [&'static str] = &["trial", "value"];
        fn record(&self) -> Vec<String> {
            vec![self.0.to_string(), fmt_f64(self.1)]
        }
    }

    #[test]
    fn header_then_rows() {
        let mut buf = Vec::new();
        write_csv(&[Row(0, 1.0), Row(1, -0.1)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "trial,value\n0,1.0000000000000000e0\n1,-1.0000000000000001e-1\n"
        );
    }
}
