//! Plain-text model files.
//!
//! A model file is a JSON document holding the plant (kernel taps,
//! nonlinearity, noise and backward-path settings) and its masks. Floats are
//! written in shortest round-trip form and parsed back exactly, so a
//! write/read cycle is lossless.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskSet;
use crate::signal::Kernel;
use crate::system::PhysicalSystem;

pub const MODEL_FORMAT: &str = "analog-bptt-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub system: PhysicalSystem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<MaskSet>,
}

pub fn write_model<W: Write>(writer: W, system: &PhysicalSystem, masks: Option<&MaskSet>) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        system: system.clone(),
        masks: masks.cloned(),
    };
    serde_json::to_writer_pretty(writer, &file)?;
    Ok(())
}

pub fn model_to_string(system: &PhysicalSystem, masks: Option<&MaskSet>) -> Result<String> {
    let mut buf = Vec::new();
    write_model(&mut buf, system, masks)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

/// Reads and validates a model file.
pub fn read_model<R: Read>(reader: R) -> Result<(PhysicalSystem, Option<MaskSet>)> {
    let file: ModelFile = serde_json::from_reader(reader)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Parse(format!(
            "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
            file.format
        )));
    }
    file.system.validate()?;
    if let Some(m) = &file.masks {
        m.validate()?;
        if m.n_inputs != file.system.n_inputs() || m.n_outputs != file.system.n_outputs() {
            return Err(Error::Dimension("masks do not match the plant's channels".into()));
        }
    }
    Ok((file.system, file.masks))
}

/// One row per tap: `lag,t,w_r_c...` with `t = lag * dt`.
pub fn write_kernel_csv<W: Write>(writer: W, kernel: &Kernel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["lag".to_string(), "t".to_string()];
    for r in 0..kernel.rows() {
        for c in 0..kernel.cols() {
            header.push(format!("w_{r}_{c}"));
        }
    }
    w.write_record(&header)?;
    for k in 0..kernel.len() {
        let mut row = vec![k.to_string(), format!("{}", k as f64 * kernel.dt())];
        row.extend(kernel.tap(k).iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
