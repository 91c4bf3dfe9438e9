//! Model file format.
//!
//! Self-describing binary layout, all integers and reals little-endian:
//!
//! ```text
//! magic   4 bytes  "CEST"
//! version u8       1
//! kind    u8       0 = mlp, 1 = rmi
//! dim     u32      point dimension (network input is dim + 1 for eps)
//! config           sample_rate f64, epochs u32, batch_size u32,
//!                  learning_rate f64, seed u64,
//!                  hidden count u32 + widths u32 each,
//!                  fanout count u32 + values u32 each
//! payload          mlp: one network
//!                  rmi: target_scale f32, then one network per stage model
//!                       in stage-major order
//! network          layer count u32, then per layer:
//!                  rows u32, cols u32, weights f32 * rows*cols, bias f32 * rows
//! ```
//!
//! Weight matrices are stored as raw 32-bit reals, so a save/load round trip
//! reproduces every prediction bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::mlp::{DenseLayer, Mlp};
use super::rmi::RmiModel;
use super::{EstimatorConfig, EstimatorError, EstimatorKind, LearnedModel};

const MAGIC: &[u8; 4] = b"CEST";
const VERSION: u8 = 1;
const KIND_MLP: u8 = 0;
const KIND_RMI: u8 = 1;

// Guards against nonsense layer shapes in corrupt files.
const MAX_LAYER_SIDE: u32 = 1 << 24;

impl LearnedModel {
    /// Serializes the model, writing to a temp file and renaming into place.
    pub fn save(&self, path: &Path) -> Result<(), EstimatorError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EstimatorError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Loads a model and rejects it unless it was trained for
    /// `expected_dim`-dimensional points.
    pub fn load_with_dim(path: &Path, expected_dim: usize) -> Result<Self, EstimatorError> {
        let model = Self::load(path)?;
        model.ensure_dim(expected_dim)?;
        Ok(model)
    }

    fn write_to(&self, w: &mut impl Write) -> Result<(), EstimatorError> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        match self {
            LearnedModel::Mlp { dim, config, net } => {
                w.write_all(&[KIND_MLP])?;
                write_u32(w, *dim as u32)?;
                write_config(w, config)?;
                write_network(w, net)?;
            }
            LearnedModel::Rmi { dim, config, index } => {
                w.write_all(&[KIND_RMI])?;
                write_u32(w, *dim as u32)?;
                write_config(w, config)?;
                write_f32(w, index.target_scale)?;
                for stage in &index.stages {
                    for net in stage {
                        write_network(w, net)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn read_from(r: &mut impl Read) -> Result<Self, EstimatorError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EstimatorError::Format("bad magic header".into()));
        }
        let version = read_u8(r)?;
        if version != VERSION {
            return Err(EstimatorError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let kind = read_u8(r)?;
        let dim = read_u32(r)? as usize;
        let (mut config, fanout) = read_config(r)?;
        match kind {
            KIND_MLP => {
                config.kind = EstimatorKind::Mlp;
                let net = read_network(r, dim + 1)?;
                Ok(LearnedModel::Mlp { dim, config, net })
            }
            KIND_RMI => {
                config.kind = EstimatorKind::Rmi;
                let target_scale = read_f32(r)?;
                let mut stages = Vec::with_capacity(fanout.len());
                for &count in &fanout {
                    let mut stage = Vec::with_capacity(count);
                    for _ in 0..count {
                        stage.push(read_network(r, dim + 1)?);
                    }
                    stages.push(stage);
                }
                if stages.is_empty() {
                    return Err(EstimatorError::Format("rmi model with no stages".into()));
                }
                Ok(LearnedModel::Rmi {
                    dim,
                    config,
                    index: RmiModel::from_parts(stages, target_scale, dim + 1),
                })
            }
            other => Err(EstimatorError::Format(format!(
                "unknown model kind byte {other}"
            ))),
        }
    }
}

fn write_config(w: &mut impl Write, config: &EstimatorConfig) -> Result<(), EstimatorError> {
    w.write_all(&config.sample_rate.to_le_bytes())?;
    write_u32(w, config.epochs as u32)?;
    write_u32(w, config.batch_size as u32)?;
    w.write_all(&config.learning_rate.to_le_bytes())?;
    w.write_all(&config.seed.to_le_bytes())?;
    write_u32(w, config.hidden_widths.len() as u32)?;
    for &h in &config.hidden_widths {
        write_u32(w, h as u32)?;
    }
    write_u32(w, config.stage_fanout.len() as u32)?;
    for &f in &config.stage_fanout {
        write_u32(w, f as u32)?;
    }
    Ok(())
}

fn read_config(r: &mut impl Read) -> Result<(EstimatorConfig, Vec<usize>), EstimatorError> {
    let sample_rate = read_f64(r)?;
    let epochs = read_u32(r)? as usize;
    let batch_size = read_u32(r)? as usize;
    let learning_rate = read_f64(r)?;
    let mut seed_bytes = [0u8; 8];
    r.read_exact(&mut seed_bytes)?;
    let seed = u64::from_le_bytes(seed_bytes);

    let hidden_len = read_u32(r)?;
    if hidden_len > MAX_LAYER_SIDE {
        return Err(EstimatorError::Format("implausible hidden layer count".into()));
    }
    let mut hidden_widths = Vec::with_capacity(hidden_len as usize);
    for _ in 0..hidden_len {
        hidden_widths.push(read_u32(r)? as usize);
    }
    let fanout_len = read_u32(r)?;
    if fanout_len > MAX_LAYER_SIDE {
        return Err(EstimatorError::Format("implausible stage count".into()));
    }
    let mut stage_fanout = Vec::with_capacity(fanout_len as usize);
    for _ in 0..fanout_len {
        stage_fanout.push(read_u32(r)? as usize);
    }
    let fanout = stage_fanout.clone();
    Ok((
        EstimatorConfig {
            kind: EstimatorKind::Mlp,
            sample_rate,
            hidden_widths,
            stage_fanout,
            epochs,
            batch_size,
            learning_rate,
            seed,
        },
        fanout,
    ))
}

fn write_network(w: &mut impl Write, net: &Mlp) -> Result<(), EstimatorError> {
    write_u32(w, net.layers.len() as u32)?;
    for layer in &net.layers {
        write_u32(w, layer.rows as u32)?;
        write_u32(w, layer.cols as u32)?;
        for &v in &layer.weights {
            write_f32(w, v)?;
        }
        for &v in &layer.bias {
            write_f32(w, v)?;
        }
    }
    Ok(())
}

fn read_network(r: &mut impl Read, expected_input: usize) -> Result<Mlp, EstimatorError> {
    let n_layers = read_u32(r)?;
    if n_layers == 0 || n_layers > MAX_LAYER_SIDE {
        return Err(EstimatorError::Format("implausible layer count".into()));
    }
    let mut layers = Vec::with_capacity(n_layers as usize);
    let mut prev = expected_input;
    for i in 0..n_layers {
        let rows = read_u32(r)?;
        let cols = read_u32(r)?;
        if rows == 0 || rows > MAX_LAYER_SIDE || cols == 0 || cols > MAX_LAYER_SIDE {
            return Err(EstimatorError::Format("implausible layer shape".into()));
        }
        if cols as usize != prev {
            return Err(EstimatorError::Format(format!(
                "layer {i} expects {cols} inputs but the previous width is {prev}"
            )));
        }
        let mut weights = Vec::with_capacity((rows * cols) as usize);
        for _ in 0..rows * cols {
            weights.push(read_f32(r)?);
        }
        let mut bias = Vec::with_capacity(rows as usize);
        for _ in 0..rows {
            bias.push(read_f32(r)?);
        }
        layers.push(DenseLayer {
            rows: rows as usize,
            cols: cols as usize,
            weights,
            bias,
        });
        prev = rows as usize;
    }
    if prev != 1 {
        return Err(EstimatorError::Format(
            "network output width must be 1".into(),
        ));
    }
    Ok(Mlp::from_layers(expected_input, layers))
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f32(w: &mut impl Write, v: f32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u8(r: &mut impl Read) -> std::io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> std::io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
