//! File formats: COO text for sparse observations, `STDT` binary for dense tensors.
//!
//! COO text starts with `# dims I1 ... ID [time]`; every following non-comment
//! line is `i1 ... iD value [t]` with 0-based indices. The dense binary layout is
//! the magic `STDT`, a little-endian `u32` order, `D` little-endian `u64` dims and
//! then the values as little-endian `f64` in row-major order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Entry, MultiIndex, SparseTensor};

pub const DENSE_MAGIC: &[u8; 4] = b"STDT";

pub fn write_coo<W: Write>(tensor: &SparseTensor, mut w: W) -> Result<()> {
    let dims: Vec<String> = tensor.dims().iter().map(|d| d.to_string()).collect();
    write!(w, "# dims {}", dims.join(" "))?;
    if tensor.is_timed() {
        write!(w, " time")?;
    }
    writeln!(w)?;
    for e in tensor.entries() {
        for c in e.index.coords() {
            write!(w, "{c} ")?;
        }
        write!(w, "{:?}", e.value)?;
        if let Some(t) = e.time {
            write!(w, " {t:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses COO text. Repeated indices are accepted (several draws per entry).
pub fn read_coo<R: BufRead>(r: R) -> Result<SparseTensor> {
    let mut dims: Option<(Vec<usize>, bool)> = None;
    let mut entries = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let mut tokens = comment.split_whitespace();
            if dims.is_none() && tokens.next() == Some("dims") {
                let mut d = Vec::new();
                let mut timed = false;
                for tok in tokens {
                    if tok == "time" {
                        timed = true;
                    } else if timed {
                        return Err(Error::Format(format!("line {}: token after `time`", lineno + 1)));
                    } else {
                        d.push(tok.parse::<usize>().map_err(|_| {
                            Error::Format(format!("line {}: bad dimension `{tok}`", lineno + 1))
                        })?);
                    }
                }
                dims = Some((d, timed));
            }
            continue;
        }
        let (d, timed) = dims
            .as_ref()
            .ok_or_else(|| Error::Format("missing `# dims` header".into()))?;
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let expected = d.len() + 1 + usize::from(*timed);
        if tokens.len() != expected {
            return Err(Error::Format(format!(
                "line {}: expected {expected} fields, got {}",
                lineno + 1,
                tokens.len()
            )));
        }
        let parse_err = |tok: &str| Error::Format(format!("line {}: bad number `{tok}`", lineno + 1));
        let coords = tokens[..d.len()]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| parse_err(t)))
            .collect::<Result<Vec<_>>>()?;
        let value: f64 = tokens[d.len()].parse().map_err(|_| parse_err(tokens[d.len()]))?;
        let time = if *timed {
            Some(tokens[d.len() + 1].parse::<f64>().map_err(|_| parse_err(tokens[d.len() + 1]))?)
        } else {
            None
        };
        entries.push(Entry { index: MultiIndex(coords), value, time });
    }
    let (d, _) = dims.ok_or_else(|| Error::Format("missing `# dims` header".into()))?;
    SparseTensor::with_repeats(d, entries)
}

pub fn save_coo(tensor: &SparseTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_coo(tensor, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_coo(path: impl AsRef<Path>) -> Result<SparseTensor> {
    read_coo(BufReader::new(fs::File::open(path)?))
}

pub fn write_dense<W: Write>(tensor: &DenseTensor, mut w: W) -> Result<()> {
    w.write_all(DENSE_MAGIC)?;
    w.write_all(&(tensor.dims().len() as u32).to_le_bytes())?;
    for &d in tensor.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in tensor.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one dense record. Returns `Ok(None)` on a clean end of stream.
pub fn read_dense_record<R: Read>(r: &mut R) -> Result<Option<DenseTensor>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut magic[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(Error::Format("truncated magic".into()));
        }
        got += n;
    }
    if &magic != DENSE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let order = u32::from_le_bytes(b4) as usize;
    let mut dims = Vec::with_capacity(order);
    let mut b8 = [0u8; 8];
    for _ in 0..order {
        r.read_exact(&mut b8)?;
        dims.push(u64::from_le_bytes(b8) as usize);
    }
    let n: usize = dims.iter().product();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    DenseTensor::new(dims, values).map(Some)
}

pub fn read_dense<R: Read>(mut r: R) -> Result<DenseTensor> {
    read_dense_record(&mut r)?.ok_or_else(|| Error::Format("empty dense file".into()))
}

pub fn save_dense(tensor: &DenseTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_dense(tensor, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dense(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_dense(BufReader::new(fs::File::open(path)?))
}

/// Index list, one whitespace-separated index per line.
pub fn save_index_list(indices: &[MultiIndex], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for i in indices {
        let parts: Vec<String> = i.coords().iter().map(|c| c.to_string()).collect();
        writeln!(w, "{}", parts.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_index_list(path: impl AsRef<Path>) -> Result<Vec<MultiIndex>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::Format(format!("bad index `{t}`"))))
                .collect::<Result<Vec<_>>>()
                .map(MultiIndex)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coo_parses_header_comments_and_scientific() {
        let text = "# dims 2 3 time\n# a comment\n0 1 1.5e-1 0.25\n\n1 2 -3 1\n";
        let t = read_coo(text.as_bytes()).unwrap();
        assert_eq!(t.dims(), &[2, 3]);
        assert!(t.is_timed());
        assert_eq!(t.entries()[0], Entry::timed([0, 1], 0.15, 0.25));
        assert_eq!(t.entries()[1], Entry::timed([1, 2], -3.0, 1.0));
    }

    #[test]
    fn coo_rejects_malformed() {
        assert!(read_coo("0 1 2\n".as_bytes()).is_err());
        assert!(read_coo("# dims 2 2\n0 1\n".as_bytes()).is_err());
        assert!(read_coo("# dims 2 2\n0 5 1.0\n".as_bytes()).is_err());
        assert!(read_coo("# dims 2 2\n0 x 1.0\n".as_bytes()).is_err());
    }

    #[test]
    fn dense_layout_is_bit_exact() {
        let t = DenseTensor::new(vec![1, 2], vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_dense(&t, &mut buf).unwrap();
        let mut expected = b"STDT".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        expected.extend((-0.5f64).to_le_bytes());
        assert_eq!(buf, expected);
        assert!(read_dense(&b"XXXX"[..]).is_err());
    }

    proptest! {
        #[test]
        fn coo_round_trips(vals in proptest::collection::vec(-1e6f64..1e6, 1..20), timed in any::<bool>()) {
            let entries: Vec<Entry> = vals.iter().enumerate().map(|(k, &v)| Entry {
                index: MultiIndex(vec![k % 4, k / 4]),
                value: v,
                time: timed.then_some(k as f64 / 7.0),
            }).collect();
            let t = SparseTensor::new(vec![4, 5], entries).unwrap();
            let mut buf = Vec::new();
            write_coo(&t, &mut buf).unwrap();
            let back = read_coo(&buf[..]).unwrap();
            prop_assert_eq!(back.entries(), t.entries());
        }

        #[test]
        fn dense_round_trips(vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 6)) {
            let t = DenseTensor::new(vec![2, 3], vals).unwrap();
            let mut buf = Vec::new();
            write_dense(&t, &mut buf).unwrap();
            prop_assert_eq!(read_dense(&buf[..]).unwrap(), t);
        }
    }
}
