//! Parameter checkpoints.
//!
//! Plain UTF-8 text, stable across runs:
//!
//! ```text
//! gat-infomax-checkpoint 1
//! leaky_slope 2e-1
//! aggregation attention
//! readout_sigmoid false
//! tensors 10
//! layer0.head0.weight 1433 512       <- manifest: name rows cols
//! ...
//! discriminator.weight 512 512
//! values
//! <row-major values of every tensor in manifest order, one matrix row per line>
//! ```
//!
//! Values are written in shortest round-trip scientific notation, so
//! loading a checkpoint reproduces every `f64` bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::contrastive::DiscriminatorParams;
use crate::encoder::{Aggregation, AttentionHead, EncoderLayer, EncoderParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trainer::Model;

pub const MAGIC: &str = "gat-infomax-checkpoint";
pub const VERSION: u32 = 1;

pub fn to_text(model: &Model) -> String {
    let tensors = model.tensors();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "leaky_slope {:e}", model.encoder.leaky_slope);
    let _ = writeln!(s, "aggregation {}", model.encoder.aggregation);
    let _ = writeln!(s, "readout_sigmoid {}", model.readout_sigmoid);
    let _ = writeln!(s, "tensors {}", tensors.len());
    for (name, m) in &tensors {
        let _ = writeln!(s, "{name} {} {}", m.rows(), m.cols());
    }
    s.push_str("values\n");
    for (_, m) in &tensors {
        for r in 0..m.rows() {
            let mut first = true;
            for v in m.row(r) {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{v:e}");
            }
            s.push('\n');
        }
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| Error::Dataset("checkpoint ends early".into()))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(|v| (n, v))
            .ok_or_else(|| Error::Dataset(format!("checkpoint line {n}: expected `{key}`")))
    }
}

fn bad(line: usize, what: impl std::fmt::Display) -> Error {
    Error::Dataset(format!("checkpoint line {line}: {what}"))
}

pub fn from_text(text: &str) -> Result<Model> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (n, version) = lines.field(MAGIC)?;
    if version.trim() != VERSION.to_string() {
        return Err(bad(n, format!("unsupported version {version}")));
    }
    let (n, v) = lines.field("leaky_slope")?;
    let leaky_slope: f64 = v.parse().map_err(|e| bad(n, e))?;
    let (_, v) = lines.field("aggregation")?;
    let aggregation: Aggregation = v.parse()?;
    let (n, v) = lines.field("readout_sigmoid")?;
    let readout_sigmoid: bool = v.parse().map_err(|e| bad(n, e))?;
    let (n, v) = lines.field("tensors")?;
    let count: usize = v.parse().map_err(|e| bad(n, e))?;

    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = lines.next()?;
        let parts: Vec<&str> = line.split(' ').collect();
        let [name, rows, cols] = parts[..] else {
            return Err(bad(n, "expected `name rows cols`"));
        };
        let rows: usize = rows.parse().map_err(|e| bad(n, e))?;
        let cols: usize = cols.parse().map_err(|e| bad(n, e))?;
        manifest.push((name.to_string(), rows, cols));
    }
    let (n, line) = lines.next()?;
    if line != "values" {
        return Err(bad(n, "expected `values`"));
    }

    let mut tensors = Vec::with_capacity(count);
    for (name, rows, cols) in &manifest {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..*rows {
            let (n, line) = lines.next()?;
            let before = data.len();
            for tok in line.split(' ').filter(|t| !t.is_empty()) {
                data.push(tok.parse::<f64>().map_err(|e| bad(n, e))?);
            }
            if data.len() - before != *cols {
                return Err(bad(n, format!("{name}: expected {cols} values")));
            }
        }
        tensors.push((name.clone(), Matrix::from_vec(*rows, *cols, data)?));
    }
    assemble(tensors, leaky_slope, aggregation, readout_sigmoid)
}

/// Rebuilds the model from named tensors and checks that the manifest
/// order is exactly the one [`Model::tensors`] produces.
fn assemble(
    tensors: Vec<(String, Matrix)>,
    leaky_slope: f64,
    aggregation: Aggregation,
    readout_sigmoid: bool,
) -> Result<Model> {
    let manifest: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
    let mut layers: Vec<EncoderLayer> = Vec::new();
    let mut discriminator = None;
    for (name, m) in tensors {
        if name == "discriminator.weight" {
            discriminator = Some(DiscriminatorParams { weight: m });
            continue;
        }
        let unknown = || Error::Dataset(format!("unknown checkpoint tensor `{name}`"));
        let (layer, rest) = name
            .strip_prefix("layer")
            .and_then(|r| r.split_once('.'))
            .ok_or_else(unknown)?;
        let l: usize = layer.parse().map_err(|_| unknown())?;
        if l == layers.len() {
            layers.push(EncoderLayer {
                heads: Vec::new(),
                prelu_slope: Matrix::scalar(0.0),
            });
        }
        let layer = layers.get_mut(l).ok_or_else(unknown)?;
        if rest == "prelu_slope" {
            layer.prelu_slope = m;
            continue;
        }
        let (head, field) = rest
            .strip_prefix("head")
            .and_then(|r| r.split_once('.'))
            .ok_or_else(unknown)?;
        let k: usize = head.parse().map_err(|_| unknown())?;
        match field {
            "weight" if k == layer.heads.len() => layer.heads.push(AttentionHead {
                weight: m,
                attention: Matrix::zeros(0, 0),
            }),
            "attention" if k + 1 == layer.heads.len() => layer.heads[k].attention = m,
            _ => return Err(unknown()),
        }
    }
    let discriminator =
        discriminator.ok_or_else(|| Error::Dataset("checkpoint lacks discriminator.weight".into()))?;
    let model = Model {
        encoder: EncoderParams {
            layers,
            leaky_slope,
            aggregation,
        },
        discriminator,
        readout_sigmoid,
    };
    let expected: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    if expected != manifest {
        return Err(Error::Dataset("checkpoint manifest is out of order or incomplete".into()));
    }
    model.encoder.validate()?;
    let d = model.encoder.embed_dim();
    if model.discriminator.weight.shape() != (d, d) {
        return Err(Error::Shape {
            op: "checkpoint discriminator",
            left: model.discriminator.weight.shape(),
            right: (d, d),
        });
    }
    for layer in &model.encoder.layers {
        if layer.prelu_slope.shape() != (1, 1) {
            return Err(Error::Dataset("prelu_slope must be 1x1".into()));
        }
    }
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_text(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{init_params, TrainConfig};

    fn model() -> Model {
        let cfg = TrainConfig {
            embed_dim: 3,
            heads: 2,
            layers: 2,
            seed: 4,
            ..TrainConfig::default()
        };
        init_params(&cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = model();
        m.encoder.layers[0].heads[1].weight.set(0, 0, 1e-310);
        m.discriminator.weight.set(2, 2, -0.1 - 0.2);
        let text = to_text(&m);
        let back = from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_text(&back), text);
    }

    #[test]
    fn manifest_lists_every_tensor() {
        let text = to_text(&model());
        assert!(text.starts_with("gat-infomax-checkpoint 1\n"));
        assert!(text.contains("\nlayer1.head1.attention 6 1\n"));
        assert!(text.contains("\ndiscriminator.weight 3 3\n"));
        assert!(text.contains("\ntensors 11\n"));
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let text = to_text(&model());
        assert!(from_text(&text.replace("checkpoint 1", "checkpoint 9")).is_err());
        assert!(from_text(&text.replace("layer0.head1.weight", "layer0.head7.weight")).is_err());
        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(from_text(&truncated).is_err());
        assert!(from_text(&text.replace("discriminator.weight 3 3", "discriminator.weight 3 2")).is_err());
    }
}
