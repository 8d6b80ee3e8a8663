//! Packed inference models: 6-bit weight codes plus 32-bit fixed-point
//! biases in the shared container format.
//!
//! Metadata: `{"kind": "packed", "arch", "mode", "fixed_point", "epoch",
//! "pack_report": {"saturated", "flushed"}}`. Records per shift layer, in
//! layer order: `<name>.weight` (packed6, weight dims) and `<name>.bias`
//! (i32 codes).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{FixedTensor, IntegerNetwork, PackReport, PackedShiftTensor, ShiftLayer};
use crate::nn::{Arch, InitConfig, Mode, Model};
use crate::rng::Rng;
use crate::shift::FixedPointFormat;

use super::checkpoint::Checkpoint;
use super::container::{Container, Payload};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedMeta {
    pub kind: String,
    pub arch: Arch,
    pub mode: Mode,
    pub fixed_point: FixedPointFormat,
    pub epoch: usize,
    pub saturated: usize,
    pub flushed: usize,
}

/// Byte counts of the weight payload, packed and at 32 bits per weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PackSummary {
    pub weights: usize,
    pub packed_bytes: usize,
    pub float32_bytes: usize,
    pub saturated: usize,
    pub flushed: usize,
}

impl PackSummary {
    pub fn ratio(&self) -> f64 {
        self.float32_bytes as f64 / self.packed_bytes as f64
    }
}

/// Packed form of a DeepShift checkpoint.
pub fn export_packed(ckpt: &Checkpoint) -> Result<(Container, PackSummary)> {
    let model: Model<f64> = ckpt.to_model()?;
    let (net, report) = IntegerNetwork::from_model(&model)?;
    let PackReport { saturated, flushed } = report;
    let meta = PackedMeta {
        kind: "packed".into(),
        arch: net.arch(),
        mode: model.mode(),
        fixed_point: net.fixed_point(),
        epoch: ckpt.meta.epoch,
        saturated,
        flushed,
    };
    let mut c = Container::new(serde_json::to_value(&meta)?);
    let mut summary = PackSummary {
        weights: 0,
        packed_bytes: 0,
        float32_bytes: 0,
        saturated,
        flushed,
    };
    for l in net.shift_layers() {
        let w = &l.weight;
        summary.weights += w.len();
        summary.packed_bytes += w.as_bytes().len();
        summary.float32_bytes += 4 * w.len();
        c.push(
            format!("{}.weight", l.name),
            w.shape(),
            Payload::Packed6(w.as_bytes().to_vec()),
        );
        c.push(
            format!("{}.bias", l.name),
            l.bias.shape(),
            Payload::I32(l.bias.data().to_vec()),
        );
    }
    Ok((c, summary))
}

/// Rebuilds the integer network stored by [`export_packed`].
pub fn load_packed(c: &Container) -> Result<(IntegerNetwork, PackedMeta)> {
    let meta: PackedMeta = serde_json::from_value(c.meta.clone())?;
    if meta.kind != "packed" {
        return Err(Error::Format(format!(
            "expected a packed model, found kind {:?}",
            meta.kind
        )));
    }
    let fmt = meta.fixed_point;
    let skeleton = Model::<f64>::build(
        meta.arch,
        Mode::DeepshiftQ,
        fmt,
        &InitConfig::default(),
        &mut Rng::new(0),
    )?;
    let net = IntegerNetwork::assemble(meta.arch, fmt, skeleton.layers(), |a| {
        let record = |suffix: &str| {
            let name = format!("{}.{suffix}", a.name());
            c.record(&name)
                .ok_or_else(|| Error::Format(format!("missing record {name}")))
        };
        let w = record("weight")?;
        if w.dims != a.shape() {
            return Err(Error::Format(format!(
                "{}: stored shape {:?}, expected {:?}",
                w.name,
                w.dims,
                a.shape()
            )));
        }
        let Payload::Packed6(bytes) = &w.payload else {
            return Err(Error::Format(format!("{} is not packed", w.name)));
        };
        let b = record("bias")?;
        let Payload::I32(codes) = &b.payload else {
            return Err(Error::Format(format!("{} is not i32", b.name)));
        };
        ShiftLayer::new(
            a.name(),
            a.kind(),
            PackedShiftTensor::from_bytes(&w.dims, bytes.clone())?,
            FixedTensor::new(&b.dims, codes.clone(), fmt)?,
        )
    })?;
    Ok((net, meta))
}

pub fn save_packed(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<PackSummary> {
    let (c, summary) = export_packed(ckpt)?;
    c.save(path)?;
    Ok(summary)
}

pub fn read_packed(path: impl AsRef<Path>) -> Result<(IntegerNetwork, PackedMeta)> {
    load_packed(&Container::load(path)?)
}
