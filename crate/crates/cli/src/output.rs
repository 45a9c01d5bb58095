//! Artifact writers. Every file lands directly inside the output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Floats are rounded to this many significant digits in CSV output.
pub const SIG_DIGITS: usize = 12;

/// Formats `x` with at most [`SIG_DIGITS`] significant digits.
///
/// Moderate magnitudes use positional notation, very large or small ones
/// scientific notation; the shortest string that round-trips the rounded
/// value is printed either way.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{:.*e}", SIG_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses");
    let mag = rounded.abs();
    if (1e-6..1e15).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

pub struct Csv {
    inner: csv::Writer<BufWriter<File>>,
}

impl Csv {
    pub fn create<S: AsRef<str>>(dir: &Path, name: &str, header: &[S]) -> anyhow::Result<Self> {
        let file = File::create(dir.join(name))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner.write_record(header.iter().map(|h| h.as_ref()))?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> anyhow::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(path)
}
