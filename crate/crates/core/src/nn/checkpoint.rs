//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HBCK"
//! 4       4     format version, u32 little-endian
//! 8       8     header length H, u64 little-endian
//! 16      H     JSON header: architecture, graph, parameter shapes, training state
//! 16+H    ...   f64 little-endian payload: parameters in declaration order,
//!               then (if present) Adam first moments, then second moments
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Init, LayerNode, Network, Param};
use crate::optim::AdamState;
use crate::tensor::{Primitive, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HBCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

/// Training progress stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingState {
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
    pub adam: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: String,
    input_shape: [usize; 3],
    trained_epochs: usize,
    penultimate: usize,
    nodes: Vec<NodeHeader>,
    epoch: usize,
    best_val_loss: Option<f64>,
    adam_step: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeHeader {
    name: String,
    op: Option<Primitive>,
    inputs: Vec<usize>,
    params: Vec<ParamHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

pub fn save_checkpoint(net: &Network, state: &TrainingState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(adam) = &state.adam {
        let shapes_match = adam.m.len() == net.params().count()
            && adam.v.len() == adam.m.len()
            && net
                .params()
                .zip(adam.m.iter().zip(&adam.v))
                .all(|(p, (m, v))| p.value.shape() == m.shape() && p.value.shape() == v.shape());
        if !shapes_match {
            return Err(Error::dim("optimizer moments do not match the network parameters"));
        }
    }
    let header = Header {
        architecture: net.name().to_string(),
        input_shape: net.input_shape(),
        trained_epochs: net.trained_epochs(),
        penultimate: net.penultimate(),
        nodes: net
            .nodes()
            .iter()
            .map(|n| NodeHeader {
                name: n.name.clone(),
                op: n.op.clone(),
                inputs: n.inputs.clone(),
                params: n
                    .params
                    .iter()
                    .map(|p| ParamHeader {
                        name: p.name.clone(),
                        shape: p.value.shape().to_vec(),
                        init: p.init,
                    })
                    .collect(),
            })
            .collect(),
        epoch: state.epoch,
        best_val_loss: state.best_val_loss,
        adam_step: state.adam.as_ref().map(|a| a.step),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(&tmp)?);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        let mut tensors: Vec<&Tensor> = net.params().map(|p| &p.value).collect();
        if let Some(adam) = &state.adam {
            tensors.extend(&adam.m);
            tensors.extend(&adam.v);
        }
        for t in tensors {
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, TrainingState)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn corrupt(offset: usize, message: impl Into<String>) -> Error {
    Error::Corrupt {
        offset: offset as u64,
        message: message.into(),
    }
}

fn decode(bytes: &[u8]) -> Result<(Network, TrainingState)> {
    if bytes.len() < 4 {
        return Err(corrupt(bytes.len(), "file ends inside the magic bytes"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt(0, "not a checkpoint (bad magic)"));
    }
    if bytes.len() < PREAMBLE {
        return Err(corrupt(bytes.len(), "file ends inside the preamble"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(
            4,
            format!("unsupported format version {version} (expected {CHECKPOINT_VERSION})"),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = PREAMBLE
        .checked_add(usize::try_from(header_len).map_err(|_| corrupt(8, "header length overflows"))?)
        .ok_or_else(|| corrupt(8, "header length overflows"))?;
    if bytes.len() < header_end {
        return Err(corrupt(
            bytes.len(),
            format!("file ends inside the {header_len}-byte header"),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| corrupt(PREAMBLE + e.column().saturating_sub(1), format!("bad header: {e}")))?;

    let param_lens: Vec<usize> = header
        .nodes
        .iter()
        .flat_map(|n| n.params.iter().map(|p| p.shape.iter().product::<usize>()))
        .collect();
    let param_total: usize = param_lens.iter().sum();
    let moments = if header.adam_step.is_some() { 2 } else { 0 };
    let expected = header_end + 8 * param_total * (1 + moments);
    if bytes.len() < expected {
        return Err(corrupt(
            bytes.len(),
            format!("payload truncated: expected {} bytes in total", expected),
        ));
    }
    if bytes.len() > expected {
        return Err(corrupt(expected, "trailing bytes after payload"));
    }

    let mut cursor = header_end;
    let mut read_tensor = |shape: &[usize]| -> Tensor {
        let n: usize = shape.iter().product();
        let data = bytes[cursor..cursor + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        cursor += 8 * n;
        Tensor::new(shape, data).expect("length computed from shape")
    };

    let mut nodes = Vec::with_capacity(header.nodes.len());
    for n in header.nodes {
        let params = n
            .params
            .into_iter()
            .map(|p| Param {
                value: read_tensor(&p.shape),
                name: p.name,
                init: p.init,
            })
            .collect();
        nodes.push(LayerNode {
            name: n.name,
            op: n.op,
            inputs: n.inputs,
            params,
        });
    }
    let shapes: Vec<Vec<usize>> = nodes
        .iter()
        .flat_map(|n| n.params.iter().map(|p| p.value.shape().to_vec()))
        .collect();
    let adam = header.adam_step.map(|step| {
        let m = shapes.iter().map(|s| read_tensor(s)).collect();
        let v = shapes.iter().map(|s| read_tensor(s)).collect();
        AdamState { step, m, v }
    });

    let mut net = Network::from_parts(header.architecture, header.input_shape, nodes, header.penultimate)
        .map_err(|e| corrupt(PREAMBLE, format!("header describes an invalid graph: {e}")))?;
    net.set_trained_epochs(header.trained_epochs);
    Ok((
        net,
        TrainingState {
            epoch: header.epoch,
            best_val_loss: header.best_val_loss,
            adam,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_backbone_with_head, build_conv, BackboneConfig, BackboneKind};

    fn small_net() -> Network {
        let cfg = BackboneConfig {
            input_shape: [3, 8, 8],
            stem_channels: 2,
            stage_channels: vec![4],
            blocks_per_stage: 1,
            dropout: 0.2,
        };
        build_backbone_with_head(BackboneKind::Inception, &cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.hbck");
        let mut net = small_net();
        net.set_trained_epochs(3);
        let adam = AdamState {
            step: 12,
            m: net.params().map(|p| Tensor::full(p.value.shape(), 0.25)).collect(),
            v: net.params().map(|p| Tensor::full(p.value.shape(), 1e-300)).collect(),
        };
        let state = TrainingState {
            epoch: 3,
            best_val_loss: Some(0.1 + 0.2),
            adam: Some(adam),
        };
        save_checkpoint(&net, &state, &path).unwrap();
        let (loaded, loaded_state) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_state, state);
        assert_eq!(loaded.trained_epochs(), 3);
        assert_eq!(loaded.name(), net.name());
        for (a, b) in net.params().zip(loaded.params()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
            assert_eq!(a.init, b.init);
        }
        let x = Tensor::randn([2, 3, 8, 8], 1.0, &mut crate::rng(1));
        assert_eq!(net.predict(&x).unwrap(), loaded.predict(&x).unwrap());
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.hbck");
        save_checkpoint(&build_conv([3, 6, 6], 2, 0).unwrap(), &TrainingState::default(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [2, 10, 40, bytes.len() - 3] {
            fs::write(&path, &bytes[..cut]).unwrap();
            match load_checkpoint(&path) {
                Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, cut as u64),
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_other_versions_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.hbck");
        save_checkpoint(&build_conv([3, 6, 6], 2, 0).unwrap(), &TrainingState::default(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Corrupt { offset: 4, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Corrupt { offset: 0, .. })));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let net = build_conv([3, 6, 6], 2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.hbck");
        save_checkpoint(&net, &TrainingState::default(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let len = bytes.len();
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(decode(&bytes), Err(Error::Corrupt { offset, .. }) if offset == len as u64));
    }

    #[test]
    fn mismatched_moments_refused() {
        let net = build_conv([3, 6, 6], 2, 0).unwrap();
        let state = TrainingState {
            adam: Some(AdamState {
                step: 1,
                m: vec![],
                v: vec![],
            }),
            ..TrainingState::default()
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(save_checkpoint(&net, &state, dir.path().join("x")).is_err());
    }
}
