//! Model checkpoints.
//!
//! Single binary file, all integers little-endian:
//!
//! ```text
//! magic "MFN1"
//! | u32 manifest length | manifest UTF-8 ("key = value" lines)
//! | tensors in declaration order, each as 4x u32 dims + f32 data
//! ```
//!
//! The manifest carries the architecture id, class count, width scale,
//! block order, and whatever else reconstruction needs (explicit widths,
//! modality, branch count, base descriptions for ensembles). Tensor records
//! cover every parameter in declaration order followed by every batch-norm
//! running mean/variance pair, so a reloaded model reproduces eval-mode
//! inference bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::init::rng_from_seed;
use crate::models::blocks::BlockOrder;
use crate::models::correction::{BaseModel, Modality, ResidualCorrection};
use crate::models::fusenet::{FuseNet, FuseNetConfig, FusionMode};
use crate::models::network::{Architecture, Network};
use crate::models::segnet::{SegNet, SegNetConfig};
use crate::tensor::Tensor4;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFN1";

fn widths_to_string(widths: &[usize; 5]) -> String {
    widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn widths_from_string(s: &str) -> Result<[usize; 5]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Checkpoint(format!("bad widths list '{s}'")))?;
    if parts.len() != 5 {
        return Err(Error::Checkpoint(format!(
            "widths list '{s}' must have 5 entries"
        )));
    }
    Ok([parts[0], parts[1], parts[2], parts[3], parts[4]])
}

fn manifest_for(net: &Network, width_scale: usize) -> String {
    let mut lines = Vec::new();
    lines.push(format!("arch = {}", net.architecture().as_str()));
    lines.push(format!("k = {}", net.num_classes()));
    lines.push(format!("width_scale = {width_scale}"));
    match net {
        Network::SegNet { net, modality } => {
            lines.push(format!("block_order = {}", net.cfg.block_order.as_str()));
            lines.push(format!("in_channels = {}", net.cfg.in_channels));
            lines.push(format!("widths = {}", widths_to_string(&net.cfg.widths)));
            lines.push(format!("branches = {}", net.cfg.branches));
            lines.push(format!("modality = {}", modality.as_str()));
        }
        Network::FuseNet(net) => {
            lines.push(format!("block_order = {}", net.cfg.block_order.as_str()));
            lines.push(format!("in_channels = {}", net.cfg.main_channels));
            lines.push(format!("aux_channels = {}", net.cfg.aux_channels));
            lines.push(format!("widths = {}", widths_to_string(&net.cfg.widths)));
        }
        Network::Correction(ens) => {
            lines.push(format!(
                "block_order = {}",
                ens.bases[0].net.cfg.block_order.as_str()
            ));
            lines.push(format!("bases = {}", ens.bases.len()));
            for (i, base) in ens.bases.iter().enumerate() {
                lines.push(format!("base{i}.modality = {}", base.modality.as_str()));
                lines.push(format!("base{i}.in_channels = {}", base.net.cfg.in_channels));
                lines.push(format!(
                    "base{i}.widths = {}",
                    widths_to_string(&base.net.cfg.widths)
                ));
                lines.push(format!("base{i}.branches = {}", base.net.cfg.branches));
            }
        }
    }
    lines.join("\n")
}

fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Checkpoint(format!("manifest line without '=': '{line}'"))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn required<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("manifest missing '{key}'")))
}

fn write_tensor(out: &mut impl Write, t: &Tensor4) -> Result<()> {
    let (n, c, h, w) = t.dims();
    for d in [n, c, h, w] {
        out.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in t.data() {
        out.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor(reader: &mut impl Read, what: &str) -> Result<Tensor4> {
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = reader
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Checkpoint(format!("truncated dims for {what}")))? as usize;
    }
    let len = dims.iter().product::<usize>();
    let mut data = vec![0.0f32; len];
    reader
        .read_f32_into::<LittleEndian>(&mut data)
        .map_err(|_| Error::Checkpoint(format!("truncated data for {what}")))?;
    Tensor4::from_vec((dims[0], dims[1], dims[2], dims[3]), data)
        .map_err(|e| Error::Checkpoint(format!("bad dims for {what}: {e}")))
}

pub fn save_checkpoint(net: &mut Network, width_scale: usize, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(CHECKPOINT_MAGIC)?;
    let manifest = manifest_for(net, width_scale);
    out.write_u32::<LittleEndian>(manifest.len() as u32)?;
    out.write_all(manifest.as_bytes())?;
    for p in net.all_parameters_mut() {
        write_tensor(&mut out, &p.value)?;
    }
    for bn in bn_layers(net) {
        let c = bn.channels();
        let mean = Tensor4::from_vec((1, c, 1, 1), bn.running_mean.clone())?;
        let var = Tensor4::from_vec((1, c, 1, 1), bn.running_var.clone())?;
        write_tensor(&mut out, &mean)?;
        write_tensor(&mut out, &var)?;
    }
    out.flush()?;
    Ok(())
}

fn bn_layers(net: &mut Network) -> Vec<&mut crate::layers::BatchNorm2d> {
    match net {
        Network::SegNet { net, .. } => net.bn_layers_mut(),
        Network::FuseNet(net) => net.bn_layers_mut(),
        Network::Correction(ens) => ens.bn_layers_mut(),
    }
}

fn segnet_from_manifest(
    map: &BTreeMap<String, String>,
    prefix: &str,
    num_classes: usize,
    block_order: BlockOrder,
) -> Result<SegNet> {
    let key = |k: &str| format!("{prefix}{k}");
    let in_channels: usize = required(map, &key("in_channels"))?
        .parse()
        .map_err(|_| Error::Checkpoint("bad in_channels".into()))?;
    let widths = widths_from_string(required(map, &key("widths"))?)?;
    let branches: usize = required(map, &key("branches"))?
        .parse()
        .map_err(|_| Error::Checkpoint("bad branches".into()))?;
    let cfg = SegNetConfig::new(in_channels, num_classes)
        .with_widths(widths)
        .with_branches(branches)
        .with_block_order(block_order);
    Ok(SegNet::new(cfg, &mut rng_from_seed(0)))
}

/// Reads a checkpoint back into a freshly constructed network.
pub fn load_checkpoint(path: &Path) -> Result<(Network, usize)> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let manifest_len = reader
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Checkpoint("truncated manifest length".into()))? as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    reader
        .read_exact(&mut manifest_bytes)
        .map_err(|_| Error::Checkpoint("truncated manifest".into()))?;
    let manifest = String::from_utf8(manifest_bytes)
        .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
    let map = parse_manifest(&manifest)?;

    let arch = Architecture::parse(required(&map, "arch")?)
        .ok_or_else(|| Error::Checkpoint(format!("unknown architecture '{}'", map["arch"])))?;
    let num_classes: usize = required(&map, "k")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad k".into()))?;
    let width_scale: usize = required(&map, "width_scale")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad width_scale".into()))?;
    let block_order = BlockOrder::parse(required(&map, "block_order")?)
        .ok_or_else(|| Error::Checkpoint("bad block_order".into()))?;

    let mut net = match arch {
        Architecture::SegNet | Architecture::SegNetMs => {
            let modality = Modality::parse(required(&map, "modality")?)
                .ok_or_else(|| Error::Checkpoint("bad modality".into()))?;
            let net = segnet_from_manifest(&map, "", num_classes, block_order)?;
            Network::SegNet { net, modality }
        }
        Architecture::FuseNetSum | Architecture::FuseNetVirtual => {
            let mode = if arch == Architecture::FuseNetSum {
                FusionMode::Sum
            } else {
                FusionMode::Virtual
            };
            let in_channels: usize = required(&map, "in_channels")?
                .parse()
                .map_err(|_| Error::Checkpoint("bad in_channels".into()))?;
            let aux_channels: usize = required(&map, "aux_channels")?
                .parse()
                .map_err(|_| Error::Checkpoint("bad aux_channels".into()))?;
            let widths = widths_from_string(required(&map, "widths")?)?;
            let cfg = FuseNetConfig::new(in_channels, aux_channels, num_classes, mode)
                .with_widths(widths)
                .with_block_order(block_order);
            Network::FuseNet(FuseNet::new(cfg, &mut rng_from_seed(0)))
        }
        Architecture::ResidualCorrection => {
            let count: usize = required(&map, "bases")?
                .parse()
                .map_err(|_| Error::Checkpoint("bad base count".into()))?;
            let mut bases = Vec::with_capacity(count);
            for i in 0..count {
                let prefix = format!("base{i}.");
                let modality = Modality::parse(required(&map, &format!("{prefix}modality"))?)
                    .ok_or_else(|| Error::Checkpoint("bad base modality".into()))?;
                let net = segnet_from_manifest(&map, &prefix, num_classes, block_order)?;
                bases.push(BaseModel { net, modality });
            }
            Network::Correction(ResidualCorrection::new(bases, &mut rng_from_seed(0))?)
        }
    };

    for p in net.all_parameters_mut() {
        let stored = read_tensor(&mut reader, &p.name)?;
        if stored.dims() != p.value.dims() {
            return Err(Error::Checkpoint(format!(
                "parameter {}: stored dims {:?} do not match model dims {:?}",
                p.name,
                stored.dims(),
                p.value.dims()
            )));
        }
        p.value = stored;
    }
    for bn in bn_layers(&mut net) {
        let c = bn.channels();
        let mean = read_tensor(&mut reader, "running_mean")?;
        let var = read_tensor(&mut reader, "running_var")?;
        if mean.dims() != (1, c, 1, 1) || var.dims() != (1, c, 1, 1) {
            return Err(Error::Checkpoint(
                "running statistics dims do not match the model".into(),
            ));
        }
        bn.running_mean = mean.into_vec();
        bn.running_var = var.into_vec();
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok((net, width_scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::uniform_pm1;
    use crate::layers::Mode;

    fn tiny_segnet(seed: u64, branches: usize) -> Network {
        let cfg = SegNetConfig::new(3, 6)
            .with_widths([4, 4, 4, 4, 4])
            .with_branches(branches);
        Network::SegNet {
            net: SegNet::new(cfg, &mut rng_from_seed(seed)),
            modality: Modality::Optical,
        }
    }

    #[test]
    fn round_trip_preserves_inference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mfn");
        let mut net = tiny_segnet(7, 3);
        // make running stats non-trivial
        net.set_mode(Mode::Train);
        let mut rng = rng_from_seed(1);
        let optical = uniform_pm1((2, 3, 32, 32), &mut rng);
        let composite = uniform_pm1((2, 3, 32, 32), &mut rng);
        net.forward(&optical, &composite).unwrap();
        save_checkpoint(&mut net, 16, &path).unwrap();

        let (mut loaded, ws) = load_checkpoint(&path).unwrap();
        assert_eq!(ws, 16);
        assert_eq!(loaded.architecture(), Architecture::SegNetMs);
        net.set_mode(Mode::Eval);
        loaded.set_mode(Mode::Eval);
        let a = net.forward(&optical, &composite).unwrap();
        let b = loaded.forward(&optical, &composite).unwrap();
        assert_eq!(a.full.data(), b.full.data());
    }

    #[test]
    fn file_starts_with_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mfn");
        let mut net = tiny_segnet(3, 0);
        save_checkpoint(&mut net, 1, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"MFN1");
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mfn");
        let mut net = tiny_segnet(3, 0);
        save_checkpoint(&mut net, 1, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() / 2);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn correction_checkpoint_is_self_contained() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.mfn");
        let mut rng = rng_from_seed(5);
        let bases = vec![
            BaseModel {
                net: SegNet::new(
                    SegNetConfig::new(3, 6).with_widths([4, 4, 4, 4, 4]),
                    &mut rng_from_seed(10),
                ),
                modality: Modality::Optical,
            },
            BaseModel {
                net: SegNet::new(
                    SegNetConfig::new(3, 6).with_widths([4, 4, 4, 4, 4]),
                    &mut rng_from_seed(11),
                ),
                modality: Modality::Composite,
            },
        ];
        let mut net = Network::Correction(ResidualCorrection::new(bases, &mut rng).unwrap());
        net.set_mode(Mode::Eval);
        let optical = uniform_pm1((1, 3, 32, 32), &mut rng);
        let composite = uniform_pm1((1, 3, 32, 32), &mut rng);
        let before = net.forward(&optical, &composite).unwrap();
        save_checkpoint(&mut net, 1, &path).unwrap();
        let (mut loaded, _) = load_checkpoint(&path).unwrap();
        loaded.set_mode(Mode::Eval);
        let after = loaded.forward(&optical, &composite).unwrap();
        assert_eq!(before.full.data(), after.full.data());
    }
}
