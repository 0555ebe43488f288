//! Named-block binary format for parameters and datasets.
//!
//! Layout (all integers little-endian):
//! `b"CSNB"`, `u32` version, `u32` block count, then per block
//! `u32` name length, UTF-8 name, `u32` rank, `u64` per dimension,
//! and the values as raw `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::coop::CompositeNetwork;
use crate::diffcore::Tensor;
use crate::error::{contract_err, Error, Result};
use crate::nn::Sequential;

const MAGIC: &[u8; 4] = b"CSNB";
const VERSION: u32 = 1;

pub fn write_blocks(w: &mut impl Write, blocks: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for (name, t) in blocks {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn read_blocks(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a checkpoint block file".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = c.u32("block count")?;
    let mut blocks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = c.pos as u64;
        let len = c.u32("name length")? as usize;
        let name = String::from_utf8(c.take(len, "name")?.to_vec()).map_err(|_| Error::Format {
            offset: at,
            message: "block name is not UTF-8".into(),
        })?;
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let at = c.pos as u64;
            let d = c.u64("dimension")?;
            numel = usize::try_from(d).ok().and_then(|d| numel.checked_mul(d)).ok_or(Error::Format {
                offset: at,
                message: format!("dimension {d} overflows"),
            })?;
            shape.push(d as usize);
        }
        let bytes = numel.checked_mul(8).ok_or(Error::Format {
            offset: c.pos as u64,
            message: "payload size overflows".into(),
        })?;
        let raw = c.take(bytes, "values")?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        blocks.push((name, Tensor::new(&shape, data)?));
    }
    Ok(blocks)
}

fn running_blocks<'a>(prefix: &str, seq: &'a Sequential, out: &mut Vec<(String, &'a [f64])>) {
    for (i, layer) in seq.layers.iter().enumerate() {
        if let Some(rs) = &layer.running {
            out.push((format!("{prefix}.{i}.running_mean"), &rs.mean));
            out.push((format!("{prefix}.{i}.running_var"), &rs.var));
        }
    }
}

fn sequences(net: &CompositeNetwork) -> Vec<(&'static str, &Sequential)> {
    let mut s = vec![("extractor", &net.feature_extractor), ("head", &net.output_head)];
    if let Some(e) = &net.encoder {
        s.push(("encoder", e));
    }
    if let Some(d) = &net.decoder {
        s.push(("decoder", d));
    }
    s
}

/// Every parameter block plus batch-norm running statistics.
pub fn network_blocks(net: &CompositeNetwork) -> Result<Vec<(String, Tensor)>> {
    let mut blocks: Vec<(String, Tensor)> = net.store.iter().map(|(_, e)| (e.name.clone(), e.tensor.clone())).collect();
    let mut running = Vec::new();
    for (prefix, seq) in sequences(net) {
        running_blocks(prefix, seq, &mut running);
    }
    for (name, v) in running {
        blocks.push((name, Tensor::vector(v.to_vec())?));
    }
    Ok(blocks)
}

/// Writes `<stem>.bin` and a `<stem>.manifest` text file naming the config
/// hash, epoch and blocks.
pub fn save_checkpoint(net: &CompositeNetwork, dir: &Path, stem: &str, config_hash: &str, epoch: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let blocks = network_blocks(net)?;
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join(format!("{stem}.bin")))?);
    write_blocks(&mut f, &blocks)?;
    f.flush()?;
    let mut manifest = format!("config_hash={config_hash}\nepoch={epoch}\nvariant={}\n", net.variant);
    for (name, t) in &blocks {
        manifest.push_str(&format!("block={name} {:?}\n", t.shape()));
    }
    fs::write(dir.join(format!("{stem}.manifest")), manifest)?;
    Ok(())
}

/// Restores parameters and running statistics into a network built from the
/// same architecture and variant.
pub fn load_checkpoint(net: &mut CompositeNetwork, dir: &Path, stem: &str) -> Result<()> {
    let mut f = fs::File::open(dir.join(format!("{stem}.bin")))?;
    let blocks = read_blocks(&mut f)?;
    let expected = network_blocks(net)?;
    if blocks.len() != expected.len() {
        return Err(contract_err!("checkpoint has {} blocks, network expects {}", blocks.len(), expected.len()));
    }
    for ((name, t), (want, w)) in blocks.iter().zip(&expected) {
        if name != want || t.shape() != w.shape() {
            return Err(contract_err!("checkpoint block {name} {:?} does not match {want} {:?}", t.shape(), w.shape()));
        }
    }
    let n_params = net.store.len();
    let ids: Vec<_> = net.store.iter().map(|(id, _)| id).collect();
    for (id, (_, t)) in ids.into_iter().zip(&blocks) {
        *net.store.get_mut(id) = t.clone();
    }
    let mut rest = blocks[n_params..].iter();
    let seqs: Vec<&mut Sequential> = {
        let mut v = vec![&mut net.feature_extractor, &mut net.output_head];
        if let Some(e) = net.encoder.as_mut() {
            v.push(e);
        }
        if let Some(d) = net.decoder.as_mut() {
            v.push(d);
        }
        v
    };
    for seq in seqs {
        for layer in &mut seq.layers {
            if let Some(rs) = layer.running.as_mut() {
                rs.mean = rest.next().expect("counted above").1.data().to_vec();
                rs.var = rest.next().expect("counted above").1.data().to_vec();
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_round_trip_is_bit_exact() {
        let blocks = vec![
            ("a".to_string(), Tensor::new(&[2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 0.1]).unwrap()),
            ("b.c".to_string(), Tensor::scalar(3.5)),
        ];
        let mut buf = Vec::new();
        write_blocks(&mut buf, &blocks).unwrap();
        let back = read_blocks(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for ((n1, t1), (n2, t2)) in blocks.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let mut buf = Vec::new();
        write_blocks(&mut buf, &[("w".into(), Tensor::vector(vec![1.0, 2.0]).unwrap())]).unwrap();
        buf.truncate(buf.len() - 3);
        match read_blocks(&mut buf.as_slice()).unwrap_err() {
            Error::Format { offset, message } => {
                assert!(offset > 0);
                assert!(message.contains("values"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }
}
