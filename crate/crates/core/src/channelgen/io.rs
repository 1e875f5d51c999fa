//! Dataset container format and CSV feature export.
//!
//! Layout: one text header line `DIFFCH v1 F=<F> C=<C> N=<N>\n`, then N
//! little-endian records of (label: u16, snr_db: f64, 2F f64 response values,
//! real block first).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{ChannelSample, Dataset, StatFeatures};

const MAGIC: &str = "DIFFCH v1";

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "{MAGIC} F={} C={} N={}",
        dataset.freq_bins,
        dataset.num_scenarios,
        dataset.samples.len()
    )?;
    for s in &dataset.samples {
        w.write_all(&(s.label as u16).to_le_bytes())?;
        w.write_all(&s.snr_db.to_le_bytes())?;
        for v in s.split_data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let header = header.trim_end();
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Format(format!("bad magic in dataset header: {header:?}")))?;
    let mut freq_bins = None;
    let mut num_scenarios = None;
    let mut count = None;
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header field {field:?}")))?;
        let parsed: usize = value
            .parse()
            .map_err(|_| Error::Format(format!("bad header value {field:?}")))?;
        match key {
            "F" => freq_bins = Some(parsed),
            "C" => num_scenarios = Some(parsed),
            "N" => count = Some(parsed),
            _ => return Err(Error::Format(format!("unknown header field {key:?}"))),
        }
    }
    let (freq_bins, num_scenarios, count) = match (freq_bins, num_scenarios, count) {
        (Some(f), Some(c), Some(n)) => (f, c, n),
        _ => return Err(Error::Format("header missing F=, C= or N=".into())),
    };

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let mut label_buf = [0u8; 2];
        r.read_exact(&mut label_buf)
            .map_err(|_| Error::Format(format!("truncated record {i}")))?;
        let label = u16::from_le_bytes(label_buf) as usize;
        let mut f64_buf = [0u8; 8];
        r.read_exact(&mut f64_buf)
            .map_err(|_| Error::Format(format!("truncated record {i}")))?;
        let snr_db = f64::from_le_bytes(f64_buf);
        let mut data = vec![0.0; 2 * freq_bins];
        for v in data.iter_mut() {
            r.read_exact(&mut f64_buf)
                .map_err(|_| Error::Format(format!("truncated record {i}")))?;
            *v = f64::from_le_bytes(f64_buf);
        }
        samples.push(ChannelSample::from_split_data(label, snr_db, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after final record".into()));
    }
    Dataset::new(freq_bins, num_scenarios, samples)
}

/// Per-sample feature table for inspection:
/// `sample_id,label,snr_db,path_loss_db,rms_delay_spread,num_paths,k_factor_db`.
pub fn write_features_csv(dataset: &Dataset, features: &[StatFeatures], path: &Path) -> Result<()> {
    if features.len() != dataset.samples.len() {
        return Err(Error::Contract(format!(
            "{} features for {} samples",
            features.len(),
            dataset.samples.len()
        )));
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "sample_id,label,snr_db,path_loss_db,rms_delay_spread,num_paths,k_factor_db")?;
    for (i, (s, f)) in dataset.samples.iter().zip(features).enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{},{},{}",
            s.label, s.snr_db, f.path_loss_db, f.rms_delay_spread, f.num_paths, f.k_factor_db
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channelgen::default_profiles;

    #[test]
    fn roundtrip_preserves_samples_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = Dataset::generate(&default_profiles(), 32, 5, 13).unwrap();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.freq_bins, ds.freq_bins);
        assert_eq!(loaded.num_scenarios, ds.num_scenarios);
        assert_eq!(loaded.samples.len(), ds.samples.len());
        for (a, b) in ds.samples.iter().zip(&loaded.samples) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rewriting_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        let ds = Dataset::generate(&default_profiles(), 32, 4, 99).unwrap();
        save_dataset(&ds, &p1).unwrap();
        save_dataset(&ds, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupt_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTDIFFCH\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
    }
}
