//! Binary parameter files: an 8-byte magic, a version, the architecture
//! header, then every parameter as a little-endian f64 in declaration order
//! (module first, then the patch embedder).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RsConfig;
use super::memory::PatchEmbedder;
use super::module::RsModule;
use crate::error::{Error, Result};
use crate::numerics::{flatten, unflatten};

const MAGIC: &[u8; 8] = b"REFSRCH\0";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, module: &RsModule, embedder: &PatchEmbedder) -> Result<()> {
    let c = &module.config;
    w.write_all(MAGIC)?;
    let header = [
        VERSION,
        c.d_model as u32,
        c.emb_dim as u32,
        c.layers as u32,
        c.heads as u32,
        c.points as u32,
        c.levels as u32,
        c.head_hidden as u32,
        c.num_identities as u32,
        c.use_appearance as u32,
        embedder.channels as u32,
        embedder.patch_sizes.len() as u32,
    ];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    for &p in &embedder.patch_sizes {
        w.write_all(&(p as u32).to_le_bytes())?;
    }
    w.write_all(&c.reach.to_le_bytes())?;
    let mut params = flatten(&module.tensors());
    params.extend(flatten(&embedder.tensors()));
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(RsModule, PatchEmbedder)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut h = [0usize; 11];
    for v in h.iter_mut() {
        *v = read_u32(&mut r)? as usize;
    }
    let [d_model, emb_dim, layers, heads, points, levels, head_hidden, num_identities, use_app, channels, n_patch] =
        h;
    if n_patch > 64 {
        return Err(Error::Checkpoint(format!("implausible level count {n_patch}")));
    }
    let patch_sizes = (0..n_patch)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let reach = read_f64(&mut r)?;
    let config = RsConfig {
        d_model,
        emb_dim,
        layers,
        heads,
        points,
        levels,
        reach,
        head_hidden,
        use_appearance: use_app != 0,
        num_identities,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    // Shapes come from a fresh init; values are then overwritten.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut module = RsModule::init(config, &mut rng)?;
    let mut embedder = PatchEmbedder::init(channels, &patch_sizes, d_model, &mut rng);
    let count = read_u64(&mut r)? as usize;
    let expected = module.num_params() + embedder.tensors().iter().map(|t| t.len()).sum::<usize>();
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "header implies {expected} parameters, file declares {count}"
        )));
    }
    let flat = (0..count)
        .map(|_| read_f64(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let used = unflatten(&mut module.tensors_mut(), &flat)?;
    unflatten(&mut embedder.tensors_mut(), &flat[used..])?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((module, embedder))
}

pub fn save_checkpoint(path: &Path, module: &RsModule, embedder: &PatchEmbedder) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), module, embedder)
}

pub fn load_checkpoint(path: &Path) -> Result<(RsModule, PatchEmbedder)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated file".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
