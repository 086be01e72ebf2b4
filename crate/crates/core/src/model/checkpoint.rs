use super::net::{Architecture, Mode, Seq2SeqNet};
use crate::error::{CoreError, Result};
use crate::io::{read_f64, read_u32, read_u64};
use dvfcast_autodiff::Tensor;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"CLSTM1";

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// A trained network with its optimiser step count and RNG position.
///
/// File layout: `CLSTM1`, a length-prefixed `key=value` descriptor, the
/// normalisation scale, step count and RNG state, then one record per
/// parameter (name, rank, extents, little-endian `f64` payload).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: Seq2SeqNet,
    pub step: u64,
    pub rng: RngState,
}

fn descriptor(arch: &Architecture) -> String {
    let h = arch.hidden;
    format!(
        "mode={}\nskip={}\nhidden={},{},{}\nkernel={}\nresidual={}\nchannels={}\n",
        arch.mode,
        arch.skip,
        h[0],
        h[1],
        h[2],
        arch.kernel,
        arch.residual,
        arch.channels()
    )
}

fn parse_descriptor(text: &str) -> Result<Architecture> {
    let bad = |what: &str| CoreError::Format(format!("checkpoint descriptor: bad or missing `{what}`"));
    let get = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| bad(key))
    };
    let flag = |key: &str| get(key)?.parse::<bool>().map_err(|_| bad(key));
    let mode: Mode = get("mode")?.parse().map_err(|_| bad("mode"))?;
    let hidden: Vec<usize> = get("hidden")?
        .split(',')
        .map(|s| s.parse().map_err(|_| bad("hidden")))
        .collect::<Result<_>>()?;
    let arch = Architecture {
        mode,
        skip: flag("skip")?,
        hidden: hidden.try_into().map_err(|_| bad("hidden"))?,
        kernel: get("kernel")?.parse().map_err(|_| bad("kernel"))?,
        residual: flag("residual")?,
    };
    if get("channels")?.parse::<usize>().ok() != Some(arch.channels()) {
        return Err(bad("channels"));
    }
    Ok(arch)
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let d = descriptor(self.net.arch());
        w.write_all(&(d.len() as u32).to_le_bytes())?;
        w.write_all(d.as_bytes())?;
        w.write_all(&self.net.scale().to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.rng.seed)?;
        w.write_all(&self.rng.stream.to_le_bytes())?;
        w.write_all(&self.rng.word_pos.to_le_bytes())?;
        w.write_all(&(self.net.params().len() as u32).to_le_bytes())?;
        for (name, p) in self.net.names().iter().zip(self.net.params()) {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[p.rank() as u8])?;
            for &e in p.shape() {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CoreError::Format("not a checkpoint (bad magic)".into()));
        }
        let len = read_u32(r)? as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|e| CoreError::Format(e.to_string()))?;
        let arch = parse_descriptor(&text)?;
        let scale = read_f64(r)?;
        let step = read_u64(r)?;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let stream = read_u64(r)?;
        let mut pos = [0u8; 16];
        r.read_exact(&mut pos)?;
        let rng = RngState {
            seed,
            stream,
            word_pos: u128::from_le_bytes(pos),
        };
        let count = read_u32(r)? as usize;
        let expected = arch.layout().len();
        if count != expected {
            return Err(CoreError::Format(format!(
                "checkpoint holds {count} parameters, architecture needs {expected}"
            )));
        }
        let mut names = Vec::with_capacity(count);
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut name)?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let shape = (0..rank[0])
                .map(|_| read_u32(r).map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            names.push(String::from_utf8(name).map_err(|e| CoreError::Format(e.to_string()))?);
            params.push(Tensor::new(shape, data)?);
        }
        let net = Seq2SeqNet::from_parts(arch, scale, names, params)?;
        Ok(Self { net, step, rng })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
