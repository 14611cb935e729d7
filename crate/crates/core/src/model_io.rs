//! Plain-text model files.
//!
//! Float model (`FCDSAE 1`):
//!
//! ```text
//! FCDSAE 1
//! LAYER <fan_in> <fan_out> [activation]
//! <fan_out lines of fan_in weights>
//! BIAS <fan_out values>
//! ...
//! SPARSITY <xi> <psi> <clamp_eps>
//! SEED <split seed>
//! MEAN <values>
//! STD <values>
//! ```
//!
//! Reals are written with 17 significant digits, which round-trips every
//! `f64`. The quantized model (`FCDSAE-Q 1`) has the same layer layout with
//! raw integers, a `Q <total> <int>` line after the header, and the
//! standardizer as `QIN`/`MEAN` and `QSCALE`/`INVSTD` lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::Standardizer;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, LayerParams, NetworkParams};
use crate::quant::{QFormat, QLayer, QuantizedModel};
use crate::sparsity::SparsityConfig;

pub const FLOAT_MAGIC: &str = "FCDSAE 1";
pub const QUANT_MAGIC: &str = "FCDSAE-Q 1";

/// Everything needed to evaluate a trained float network on raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel {
    pub params: NetworkParams,
    pub standardizer: Standardizer,
    pub sparsity: SparsityConfig,
    pub seed: u64,
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn join<T, F: Fn(&T) -> String>(vals: &[T], f: F) -> String {
    vals.iter().map(f).collect::<Vec<_>>().join(" ")
}

fn activation_suffix(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "",
        Activation::Identity => " identity",
    }
}

impl FloatModel {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FLOAT_MAGIC}").unwrap();
        for l in self.params.layers() {
            writeln!(s, "LAYER {} {}{}", l.fan_in(), l.fan_out(), activation_suffix(l.activation())).unwrap();
            for row in l.weights().iter_rows() {
                writeln!(s, "{}", join(row, |v| real(*v))).unwrap();
            }
            writeln!(s, "BIAS {}", join(l.biases(), |v| real(*v))).unwrap();
        }
        let sp = &self.sparsity;
        writeln!(s, "SPARSITY {} {} {}", real(sp.xi), real(sp.psi), real(sp.clamp_eps)).unwrap();
        writeln!(s, "SEED {}", self.seed).unwrap();
        writeln!(s, "MEAN {}", join(&self.standardizer.mean, |v| real(*v))).unwrap();
        writeln!(s, "STD {}", join(&self.standardizer.std, |v| real(*v))).unwrap();
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut p = Lines::new(text, path);
        p.expect_exact(FLOAT_MAGIC)?;
        let mut layers = Vec::new();
        while p.peek_keyword() == Some("LAYER") {
            let (fan_in, fan_out, act) = p.layer_header()?;
            let mut rows = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                rows.push(p.values::<f64>(None, fan_in)?);
            }
            let biases = p.values::<f64>(Some("BIAS"), fan_out)?;
            let weights = Matrix::from_rows(&rows).map_err(|e| p.err(e.to_string()))?;
            layers.push(LayerParams::new(weights, biases, act).map_err(|e| p.err(e.to_string()))?);
        }
        let params = NetworkParams::new(layers).map_err(|e| p.err(e.to_string()))?;
        let sp = p.values::<f64>(Some("SPARSITY"), 3)?;
        let seed = p.values::<u64>(Some("SEED"), 1)?[0];
        let width = params.input_width();
        let mean = p.values::<f64>(Some("MEAN"), width)?;
        let std = p.values::<f64>(Some("STD"), width)?;
        p.expect_end()?;
        Ok(Self {
            params,
            standardizer: Standardizer { mean, std },
            sparsity: SparsityConfig {
                xi: sp[0],
                psi: sp[1],
                clamp_eps: sp[2],
                layers: None,
            },
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

pub fn quantized_to_text(qm: &QuantizedModel) -> String {
    let mut s = String::new();
    writeln!(s, "{QUANT_MAGIC}").unwrap();
    writeln!(s, "Q {} {}", qm.fmt.total_bits(), qm.fmt.integer_bits()).unwrap();
    for l in &qm.layers {
        writeln!(s, "LAYER {} {}{}", l.fan_in, l.fan_out, activation_suffix(l.activation)).unwrap();
        for o in 0..l.fan_out {
            writeln!(s, "{}", join(l.weight_row(o), i64::to_string)).unwrap();
        }
        writeln!(s, "BIAS {}", join(&l.biases, i64::to_string)).unwrap();
    }
    writeln!(s, "SEED {}", qm.seed).unwrap();
    writeln!(s, "QIN {} {}", qm.input_fmt.total_bits(), qm.input_fmt.integer_bits()).unwrap();
    writeln!(s, "MEAN {}", join(&qm.mean, i64::to_string)).unwrap();
    writeln!(s, "QSCALE {} {}", qm.scale_fmt.total_bits(), qm.scale_fmt.integer_bits()).unwrap();
    writeln!(s, "INVSTD {}", join(&qm.inv_std, i64::to_string)).unwrap();
    s
}

pub fn quantized_from_text(text: &str, path: &Path) -> Result<QuantizedModel> {
    let mut p = Lines::new(text, path);
    p.expect_exact(QUANT_MAGIC)?;
    let fmt = p.format("Q")?;
    let mut layers = Vec::new();
    while p.peek_keyword() == Some("LAYER") {
        let (fan_in, fan_out, activation) = p.layer_header()?;
        let mut weights = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_out {
            weights.extend(p.values::<i64>(None, fan_in)?);
        }
        let biases = p.values::<i64>(Some("BIAS"), fan_out)?;
        layers.push(QLayer {
            fan_in,
            fan_out,
            weights,
            biases,
            activation,
        });
    }
    if layers.is_empty() {
        return Err(p.err("no LAYER blocks".into()));
    }
    let width = layers[0].fan_in;
    let seed = p.values::<u64>(Some("SEED"), 1)?[0];
    let input_fmt = p.format("QIN")?;
    let mean = p.values::<i64>(Some("MEAN"), width)?;
    let scale_fmt = p.format("QSCALE")?;
    let inv_std = p.values::<i64>(Some("INVSTD"), width)?;
    p.expect_end()?;
    let qm = QuantizedModel {
        fmt,
        input_fmt,
        scale_fmt,
        mean,
        inv_std,
        layers,
        seed,
    };
    qm.validate().map_err(|e| p.err(e.to_string()))?;
    Ok(qm)
}

pub fn save_quantized(qm: &QuantizedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, quantized_to_text(qm)).map_err(|e| Error::io(path, e))
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    quantized_from_text(&text, path)
}

/// Line cursor with 1-based line numbers for error messages.
struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
    path: PathBuf,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, path: &Path) -> Self {
        Self {
            lines: text.lines().map(str::trim).filter(|l| !l.is_empty()).collect(),
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    fn err(&self, message: String) -> Error {
        Error::ModelFormat {
            path: self.path.clone(),
            line: self.pos,
            message,
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err("unexpected end of file".into()))?;
        self.pos += 1;
        Ok(line)
    }

    fn peek_keyword(&self) -> Option<&'a str> {
        self.lines.get(self.pos).and_then(|l| l.split_whitespace().next())
    }

    fn expect_exact(&mut self, want: &str) -> Result<()> {
        let line = self.next()?;
        if line != want {
            return Err(self.err(format!("expected {want:?}, found {line:?}")));
        }
        Ok(())
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.lines.len() {
            return Err(Error::ModelFormat {
                path: self.path.clone(),
                line: self.pos + 1,
                message: "trailing content".into(),
            });
        }
        Ok(())
    }

    fn values<T: std::str::FromStr>(&mut self, keyword: Option<&str>, count: usize) -> Result<Vec<T>> {
        let line = self.next()?;
        let mut tokens = line.split_whitespace();
        if let Some(k) = keyword {
            if tokens.next() != Some(k) {
                return Err(self.err(format!("expected {k} line")));
            }
        }
        let vals = tokens
            .map(|t| t.parse::<T>().map_err(|_| self.err(format!("bad number {t:?}"))))
            .collect::<Result<Vec<T>>>()?;
        if vals.len() != count {
            return Err(self.err(format!("expected {count} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn layer_header(&mut self) -> Result<(usize, usize, Activation)> {
        let line = self.next()?;
        let t: Vec<&str> = line.split_whitespace().collect();
        let bad = || self.err(format!("bad LAYER line {line:?}"));
        if !(3..=4).contains(&t.len()) {
            return Err(bad());
        }
        let fan_in = t[1].parse().map_err(|_| bad())?;
        let fan_out = t[2].parse().map_err(|_| bad())?;
        let act = match t.get(3) {
            None | Some(&"relu") => Activation::Relu,
            Some(&"identity") => Activation::Identity,
            Some(_) => return Err(bad()),
        };
        Ok((fan_in, fan_out, act))
    }

    fn format(&mut self, keyword: &str) -> Result<QFormat> {
        let v = self.values::<u32>(Some(keyword), 2)?;
        QFormat::new(v[0], v[1]).map_err(|e| self.err(e.to_string()))
    }
}
