//! Plain-text parameter container.
//!
//! ```text
//! esce-checkpoint v1
//! net <name>
//! input <dim>
//! layers <count>
//! layer <inputs> <outputs> <activation>
//! w <row-major weights>
//! b <biases>
//! ...
//! end
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::dense::{Activation, DenseNet, Layer};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "esce-checkpoint v1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub nets: Vec<(String, DenseNet)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, net: DenseNet) {
        let name = name.into();
        self.nets.retain(|(n, _)| *n != name);
        self.nets.push((name, net));
    }

    pub fn get(&self, name: &str) -> Option<&DenseNet> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(FORMAT_TAG);
        out.push('\n');
        for (name, net) in &self.nets {
            let _ = writeln!(out, "net {name}");
            let _ = writeln!(out, "input {}", net.input_dim());
            let _ = writeln!(out, "layers {}", net.layers().len());
            for l in net.layers() {
                let _ = writeln!(out, "layer {} {} {}", l.inputs, l.outputs, l.activation.tag());
                write_row(&mut out, 'w', &l.weights);
                write_row(&mut out, 'b', &l.bias);
            }
            out.push_str("end\n");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(tag) if tag.trim() == FORMAT_TAG => {}
            Some(other) => {
                return Err(Error::Checkpoint(format!("unsupported format tag `{other}`")))
            }
            None => return Err(Error::Checkpoint("empty file".into())),
        }
        let mut ckpt = Checkpoint::new();
        while let Some(line) = lines.next() {
            let name = line
                .strip_prefix("net ")
                .ok_or_else(|| Error::Checkpoint(format!("expected `net`, found `{line}`")))?
                .trim()
                .to_string();
            let input_dim = parse_header(lines.next(), "input")?;
            let count = parse_header(lines.next(), "layers")?;
            let mut layers = Vec::with_capacity(count);
            for _ in 0..count {
                let head = lines
                    .next()
                    .ok_or_else(|| Error::Checkpoint("truncated layer".into()))?;
                let parts: Vec<&str> = head.split_whitespace().collect();
                if parts.len() != 4 || parts[0] != "layer" {
                    return Err(Error::Checkpoint(format!("bad layer header `{head}`")));
                }
                let inputs: usize = parse_num(parts[1])?;
                let outputs: usize = parse_num(parts[2])?;
                let activation = Activation::from_tag(parts[3])
                    .ok_or_else(|| Error::Checkpoint(format!("unknown activation `{}`", parts[3])))?;
                let weights = parse_row(lines.next(), 'w', inputs * outputs)?;
                let bias = parse_row(lines.next(), 'b', outputs)?;
                layers.push(Layer {
                    inputs,
                    outputs,
                    weights,
                    bias,
                    activation,
                });
            }
            match lines.next() {
                Some(l) if l.trim() == "end" => {}
                _ => return Err(Error::Checkpoint(format!("net `{name}` is missing `end`"))),
            }
            let net = DenseNet::from_layers(input_dim, layers)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            ckpt.insert(name, net);
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn write_row(out: &mut String, key: char, values: &[f64]) {
    out.push(key);
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("cannot parse `{s}`")))
}

fn parse_header(line: Option<&str>, key: &str) -> Result<usize> {
    let line = line.ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key}`, found `{line}`")))?;
    parse_num(rest.trim())
}

fn parse_row(line: Option<&str>, key: char, len: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| Error::Checkpoint(format!("missing `{key}` row")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key.encode_utf8(&mut [0; 4])) {
        return Err(Error::Checkpoint(format!("expected `{key}` row")));
    }
    let values = parts.map(parse_num).collect::<Result<Vec<f64>>>()?;
    if values.len() != len {
        return Err(Error::Checkpoint(format!(
            "`{key}` row has {} values, expected {len}",
            values.len()
        )));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = DenseNet::new(
                3,
                &[(hidden, Activation::Relu), (2, Activation::Sigmoid)],
                &mut rng,
            ).unwrap();
            let mut ckpt = Checkpoint::new();
            ckpt.insert("esce", net.clone());
            let back = Checkpoint::from_text(&ckpt.to_text()).unwrap();
            prop_assert_eq!(back.get("esce").unwrap(), &net);
        }
    }

    #[test]
    fn rejects_unknown_tag() {
        assert!(Checkpoint::from_text("other-format v9\n").is_err());
    }

    #[test]
    fn rejects_short_rows() {
        let text = format!(
            "{FORMAT_TAG}\nnet a\ninput 1\nlayers 1\nlayer 1 1 identity\nw\nb 0\nend\n"
        );
        assert!(matches!(Checkpoint::from_text(&text), Err(Error::Checkpoint(_))));
    }
}
