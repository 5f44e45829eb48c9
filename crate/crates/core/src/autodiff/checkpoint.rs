//! Plain-text, versioned parameter files. Values use Rust's shortest
//! round-trip float formatting, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::layers::{Layer, LayerSpec, Network};
use super::Tensor;

pub const CHECKPOINT_MAGIC: &str = "patrol-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint has no network named {0}")]
    MissingNetwork(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub networks: Vec<(String, Network)>,
}

fn spec_line(spec: &LayerSpec) -> String {
    match *spec {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => format!("layer conv2d {in_ch} {out_ch} {kernel} {stride} {pad}"),
        LayerSpec::Dense { input, output } => format!("layer dense {input} {output}"),
        LayerSpec::Tanh => "layer tanh".into(),
        LayerSpec::Flatten => "layer flatten".into(),
    }
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<&Network, CheckpointError> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| CheckpointError::MissingNetwork(name.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for (name, net) in &self.networks {
            let _ = writeln!(s, "network {name} {}", net.layers().len());
            for layer in net.layers() {
                s.push_str(&spec_line(&layer.spec));
                s.push('\n');
                for p in &layer.params {
                    let dims: Vec<String> = p.shape().iter().map(|d| d.to_string()).collect();
                    let _ = writeln!(s, "param {}", dims.join(" "));
                    let vals: Vec<String> = p.data().iter().map(|v| format!("{v:?}")).collect();
                    s.push_str(&vals.join(" "));
                    s.push('\n');
                }
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, msg: &str| CheckpointError::Format {
            line,
            msg: msg.to_string(),
        };
        let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
        let mut h = header.split_whitespace();
        if h.next() != Some(CHECKPOINT_MAGIC) {
            return Err(err(ln, "missing magic header"));
        }
        let version: u32 = h
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(ln, "missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut ckpt = Checkpoint::default();
        let nums = |ln: usize,
                    it: &mut dyn Iterator<Item = &str>|
         -> Result<Vec<usize>, CheckpointError> {
            it.map(|t| t.parse::<usize>().map_err(|_| err(ln, "expected integer")))
                .collect()
        };
        let mut current: Option<(String, usize, Vec<Layer>)> = None;
        let mut finished = false;
        while let Some((ln, line)) = lines.next() {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("meta") => {
                    let k = tok.next().ok_or_else(|| err(ln, "meta needs a key"))?;
                    let rest: Vec<&str> = tok.collect();
                    ckpt.meta.insert(k.to_string(), rest.join(" "));
                }
                Some("network") => {
                    if let Some((name, n, layers)) = current.take() {
                        if layers.len() != n {
                            return Err(err(ln, "layer count mismatch"));
                        }
                        let net =
                            Network::from_layers(layers).map_err(|e| err(ln, &e.to_string()))?;
                        ckpt.networks.push((name, net));
                    }
                    let name = tok.next().ok_or_else(|| err(ln, "network needs a name"))?;
                    let n = nums(ln, &mut tok)?;
                    let &[n] = n.as_slice() else {
                        return Err(err(ln, "network needs a layer count"));
                    };
                    current = Some((name.to_string(), n, Vec::new()));
                }
                Some("layer") => {
                    let (_, _, layers) = current
                        .as_mut()
                        .ok_or_else(|| err(ln, "layer outside network"))?;
                    let kind = tok.next().ok_or_else(|| err(ln, "layer needs a kind"))?;
                    let a = nums(ln, &mut tok)?;
                    let spec = match (kind, a.as_slice()) {
                        ("conv2d", &[in_ch, out_ch, kernel, stride, pad]) => LayerSpec::Conv2d {
                            in_ch,
                            out_ch,
                            kernel,
                            stride,
                            pad,
                        },
                        ("dense", &[input, output]) => LayerSpec::Dense { input, output },
                        ("tanh", &[]) => LayerSpec::Tanh,
                        ("flatten", &[]) => LayerSpec::Flatten,
                        _ => return Err(err(ln, "unknown layer")),
                    };
                    layers.push(Layer {
                        spec,
                        params: Vec::new(),
                    });
                }
                Some("param") => {
                    let shape = nums(ln, &mut tok)?;
                    let (vln, vline) = lines
                        .next()
                        .ok_or_else(|| err(ln, "missing parameter values"))?;
                    let data = vline
                        .split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|_| err(vln, "bad float")))
                        .collect::<Result<Vec<_>, _>>()?;
                    let t = Tensor::new(shape, data).map_err(|e| err(vln, &e.to_string()))?;
                    let layer = current
                        .as_mut()
                        .and_then(|(_, _, l)| l.last_mut())
                        .ok_or_else(|| err(ln, "param outside layer"))?;
                    layer.params.push(t);
                }
                Some("end") => {
                    if let Some((name, n, layers)) = current.take() {
                        if layers.len() != n {
                            return Err(err(ln, "layer count mismatch"));
                        }
                        let net =
                            Network::from_layers(layers).map_err(|e| err(ln, &e.to_string()))?;
                        ckpt.networks.push((name, net));
                    }
                    finished = true;
                    break;
                }
                None => {}
                Some(other) => return Err(err(ln, &format!("unexpected token {other}"))),
            }
        }
        if !finished {
            return Err(err(text.lines().count(), "truncated checkpoint"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = rng_from_seed(4);
        let net = Network::new(
            &[
                LayerSpec::Conv2d {
                    in_ch: 2,
                    out_ch: 2,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerSpec::Tanh,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 8,
                    output: 3,
                },
            ],
            1.3,
            0.01,
            &mut rng,
        );
        let mut ckpt = Checkpoint::default();
        ckpt.meta.insert("round".into(), "12".into());
        ckpt.networks.push(("actor0".into(), net));
        let back = Checkpoint::parse(&ckpt.to_text()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Checkpoint::parse("hello"),
            Err(CheckpointError::Format { .. })
        ));
        assert!(matches!(
            Checkpoint::parse("patrol-checkpoint 9\nend\n"),
            Err(CheckpointError::Version(9))
        ));
        assert!(matches!(
            Checkpoint::parse("patrol-checkpoint 1\nnetwork a 1\nlayer dense 1 1\n"),
            Err(CheckpointError::Format { .. })
        ));
    }
}
