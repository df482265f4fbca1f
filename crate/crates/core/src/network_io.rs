//! Moving network state in and out of named tensor maps.

use std::collections::BTreeMap;

use ganprune_nn::{Adam, Network};

use crate::checkpoint::NamedTensor;
use crate::error::{Error, Result};

/// Adds `"{prefix}.{layer}.{field}"` entries for parameters and
/// normalization buffers.
pub fn network_tensors(prefix: &str, net: &Network, out: &mut BTreeMap<String, NamedTensor>) {
    for (name, p) in net.named_params() {
        out.insert(
            format!("{prefix}.{name}"),
            NamedTensor {
                shape: p.shape.to_vec(),
                data: p.value.clone(),
            },
        );
    }
    for (name, b) in net.named_buffers() {
        out.insert(
            format!("{prefix}.{name}"),
            NamedTensor {
                shape: vec![b.len()],
                data: b.to_vec(),
            },
        );
    }
}

/// Inverse of [`network_tensors`]; every parameter and buffer must be
/// present with a matching shape.
pub fn load_network_tensors(prefix: &str, net: &mut Network, map: &BTreeMap<String, NamedTensor>) -> Result<()> {
    let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
    for name in names {
        let key = format!("{prefix}.{name}");
        let t = map.get(&key).ok_or_else(|| Error::validation(format!("missing tensor {key:?}")))?;
        let p = net.param_mut(&name).expect("named parameter exists");
        if t.shape != p.shape {
            return Err(Error::validation(format!(
                "tensor {key:?} has shape {:?}, the network expects {:?}",
                t.shape, p.shape
            )));
        }
        p.value.clone_from(&t.data);
    }
    let buffers: Vec<String> = net.named_buffers().into_iter().map(|(n, _)| n).collect();
    for name in buffers {
        let key = format!("{prefix}.{name}");
        let t = map.get(&key).ok_or_else(|| Error::validation(format!("missing tensor {key:?}")))?;
        let b = net.buffer_mut(&name).expect("named buffer exists");
        if t.data.len() != b.len() {
            return Err(Error::validation(format!("buffer {key:?} has the wrong length")));
        }
        b.clone_from(&t.data);
    }
    Ok(())
}

pub fn optimizer_tensors(prefix: &str, opt: &Adam, out: &mut BTreeMap<String, NamedTensor>, meta: &mut BTreeMap<String, f64>) {
    for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
        out.insert(format!("{prefix}.{i}.m"), NamedTensor { shape: vec![m.len()], data: m.clone() });
        out.insert(format!("{prefix}.{i}.v"), NamedTensor { shape: vec![v.len()], data: v.clone() });
    }
    meta.insert(format!("{prefix}.t"), opt.t as f64);
}

pub fn load_optimizer_tensors(
    prefix: &str,
    opt: &mut Adam,
    map: &BTreeMap<String, NamedTensor>,
    meta: &BTreeMap<String, f64>,
) -> Result<()> {
    for i in 0..opt.m.len() {
        for (suffix, slot) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
            let key = format!("{prefix}.{i}.{suffix}");
            let t = map.get(&key).ok_or_else(|| Error::validation(format!("missing tensor {key:?}")))?;
            if t.data.len() != slot.len() {
                return Err(Error::validation(format!("optimizer state {key:?} has the wrong length")));
            }
            slot.clone_from(&t.data);
        }
    }
    let key = format!("{prefix}.t");
    opt.t = meta
        .get(&key)
        .copied()
        .ok_or_else(|| Error::validation(format!("missing optimizer step {key:?}")))? as u64;
    Ok(())
}
