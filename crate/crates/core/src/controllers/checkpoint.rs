use std::io::{BufRead, Write};

use super::ParamSet;
use crate::autodiff::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8] = b"NODEC1\n";
const META_LOSS: &str = "meta.best_loss";
const META_EPOCH: &str = "meta.epoch";

/// Parameters together with the best loss seen and the epoch it was reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub best_loss: f64,
    pub epoch: usize,
}

/// Binary layout: the magic line `NODEC1`, one text line per tensor
/// (`name dim0 dim1 ...`), an empty line, then all values as little-endian
/// `f64` in header order. The best loss and epoch are stored as two trailing
/// scalar tensors.
pub fn write_checkpoint(ck: &Checkpoint, mut out: impl Write) -> Result<()> {
    let mut tensors: Vec<(&str, Tensor)> = ck
        .params
        .names()
        .iter()
        .map(String::as_str)
        .zip(ck.params.tensors().iter().cloned())
        .collect();
    tensors.push((META_LOSS, Tensor::scalar(ck.best_loss)));
    tensors.push((META_EPOCH, Tensor::scalar(ck.epoch as f64)));

    out.write_all(MAGIC)?;
    for (name, t) in &tensors {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid tensor name '{name}'")));
        }
        let mut line = name.to_string();
        for d in t.shape() {
            line.push(' ');
            line.push_str(&d.to_string());
        }
        writeln!(out, "{line}")?;
    }
    writeln!(out)?;
    for (_, t) in &tensors {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut input: impl BufRead) -> Result<Checkpoint> {
    let mut magic = vec![0u8; MAGIC.len()];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::Checkpoint("unterminated header".into()));
        }
        let line = line.trim_end_matches('\n');
        if line.is_empty() {
            break;
        }
        let mut parts = line.split(' ');
        let name = parts.next().unwrap_or_default().to_string();
        let shape = parts
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Checkpoint(format!("bad shape in header '{line}'")))?;
        headers.push((name, shape));
    }
    let mut params = ParamSet::new();
    let mut best_loss = None;
    let mut epoch = None;
    let mut buf = [0u8; 8];
    for (name, shape) in headers {
        let len = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated data for '{name}'")))?;
            data.push(f64::from_le_bytes(buf));
        }
        match name.as_str() {
            META_LOSS => best_loss = data.first().copied(),
            META_EPOCH => epoch = data.first().map(|&e| e as usize),
            _ => params.push(name, Tensor::new(&shape, data)),
        }
    }
    if input.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after data".into()));
    }
    Ok(Checkpoint {
        params,
        best_loss: best_loss.ok_or_else(|| Error::Checkpoint("missing best loss".into()))?,
        epoch: epoch.ok_or_else(|| Error::Checkpoint("missing epoch".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamSet::new();
        params.push("layer0.weight", Tensor::matrix(2, 3, vec![0.1, -0.2, 1e-300, f64::MAX, -0.0, 3.5]));
        params.push("layer0.bias", Tensor::vector(vec![1.0 / 3.0, 2.0, -7.25]));
        Checkpoint {
            params,
            best_loss: -1.875,
            epoch: 42,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        write_checkpoint(&ck, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.epoch, 42);
        assert_eq!(back.best_loss.to_bits(), ck.best_loss.to_bits());
        for (a, b) in ck.params.tensors().iter().zip(back.params.tensors()) {
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.params.names(), ck.params.names());
    }

    #[test]
    fn header_is_text() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        let head = String::from_utf8_lossy(&buf[..70]);
        assert!(head.starts_with("NODEC1\nlayer0.weight 2 3\nlayer0.bias 3\nmeta.best_loss\nmeta.epoch\n\n"));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..]).is_err());
        assert!(read_checkpoint(&b"NODEC2\n\n"[..]).is_err());
    }
}
