//! Binary model-file container: a small named-section format shared by every
//! trained model (UBM, total-variability matrix, projection backend, fusion
//! weights, network checkpoints). Sections hold either an f64 tensor or a
//! UTF-8 string; all integers are little-endian.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array4};

use crate::backend::{ClassModels, ProjectionModel};
use crate::cnn::{LayerParams, LayerSpec, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::gmm::DiagGmm;
use crate::ivector::TMatrix;

const MAGIC: &[u8; 4] = b"ASCM";
/// Container format version; feature files use version 1 of the same magic.
const VERSION: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Tensor { dims: Vec<usize>, data: Vec<f64> },
    Text(String),
}

/// An ordered set of named sections plus a kind tag ("ubm", "fusion", ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    sections: Vec<(String, Section)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            sections: Vec::new(),
        }
    }

    pub fn put_tensor(&mut self, name: &str, dims: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.sections
            .push((name.to_string(), Section::Tensor { dims, data }));
    }

    pub fn put_array1(&mut self, name: &str, a: &Array1<f64>) {
        self.put_tensor(name, vec![a.len()], a.to_vec());
    }

    pub fn put_array2(&mut self, name: &str, a: &Array2<f64>) {
        let (r, c) = a.dim();
        self.put_tensor(name, vec![r, c], a.iter().cloned().collect());
    }

    pub fn put_array4(&mut self, name: &str, a: &Array4<f64>) {
        let (d0, d1, d2, d3) = a.dim();
        self.put_tensor(name, vec![d0, d1, d2, d3], a.iter().cloned().collect());
    }

    pub fn put_text(&mut self, name: &str, text: &str) {
        self.sections
            .push((name.to_string(), Section::Text(text.to_string())));
    }

    fn get(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| {
                Error::ModelFile(format!("{} model is missing section '{name}'", self.kind))
            })
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Section::Text(t) => Ok(t),
            _ => Err(Error::ModelFile(format!("section '{name}' is not text"))),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            Section::Tensor { dims, data } => Ok((dims, data)),
            _ => Err(Error::ModelFile(format!("section '{name}' is not a tensor"))),
        }
    }

    pub fn array1(&self, name: &str) -> Result<Array1<f64>> {
        let (dims, data) = self.tensor(name)?;
        if dims.len() != 1 {
            return Err(Error::ModelFile(format!(
                "section '{name}' has {} dims, expected 1",
                dims.len()
            )));
        }
        Ok(Array1::from_vec(data.to_vec()))
    }

    pub fn array2(&self, name: &str) -> Result<Array2<f64>> {
        let (dims, data) = self.tensor(name)?;
        if dims.len() != 2 {
            return Err(Error::ModelFile(format!(
                "section '{name}' has {} dims, expected 2",
                dims.len()
            )));
        }
        Array2::from_shape_vec((dims[0], dims[1]), data.to_vec())
            .map_err(|e| Error::ModelFile(format!("section '{name}': {e}")))
    }

    pub fn array4(&self, name: &str) -> Result<Array4<f64>> {
        let (dims, data) = self.tensor(name)?;
        if dims.len() != 4 {
            return Err(Error::ModelFile(format!(
                "section '{name}' has {} dims, expected 4",
                dims.len()
            )));
        }
        Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), data.to_vec())
            .map_err(|e| Error::ModelFile(format!("section '{name}': {e}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(VERSION);
        write_str16(&mut buf, &self.kind)?;
        buf.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, section) in &self.sections {
            write_str16(&mut buf, name)?;
            match section {
                Section::Tensor { dims, data } => {
                    buf.push(0);
                    buf.push(dims.len() as u8);
                    for &d in dims {
                        buf.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for v in data {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Section::Text(t) => {
                    buf.push(1);
                    buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
                    buf.extend_from_slice(t.as_bytes());
                }
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
            path,
        };
        if cur.take(4)? != MAGIC {
            return Err(cur.bad("not a model file (bad magic)"));
        }
        let version = cur.u8()?;
        if version != VERSION {
            return Err(cur.bad(&format!("unsupported model file version {version}")));
        }
        let kind = cur.str16()?;
        let n = cur.u32()? as usize;
        let mut sections = Vec::with_capacity(n);
        for _ in 0..n {
            let name = cur.str16()?;
            match cur.u8()? {
                0 => {
                    let ndim = cur.u8()? as usize;
                    let mut dims = Vec::with_capacity(ndim);
                    for _ in 0..ndim {
                        dims.push(cur.u32()? as usize);
                    }
                    let count = dims
                        .iter()
                        .try_fold(1usize, |a, &d| a.checked_mul(d))
                        .ok_or_else(|| cur.bad("tensor size overflows"))?;
                    let raw = cur.take(count * 8)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    sections.push((name, Section::Tensor { dims, data }));
                }
                1 => {
                    let len = cur.u32()? as usize;
                    let raw = cur.take(len)?;
                    let text = std::str::from_utf8(raw)
                        .map_err(|_| cur.bad("section text is not UTF-8"))?
                        .to_string();
                    sections.push((name, Section::Text(text)));
                }
                tag => return Err(cur.bad(&format!("unknown section tag {tag}"))),
            }
        }
        if cur.pos != bytes.len() {
            return Err(cur.bad("trailing bytes after last section"));
        }
        Ok(Self { kind, sections })
    }

    /// Verify the kind tag before decoding a specific model type.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::ModelFile(format!(
                "expected a {kind} model, found '{}'",
                self.kind
            )));
        }
        Ok(())
    }
}

fn write_str16(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    if s.len() > u16::MAX as usize {
        return Err(Error::ModelFile("name too long".into()));
    }
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn bad(&self, msg: &str) -> Error {
        Error::ModelFile(format!("{}: {msg}", self.path.display()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.bad("file truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str16(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let raw = self.take(len)?;
        Ok(std::str::from_utf8(raw)
            .map_err(|_| self.bad("name is not UTF-8"))?
            .to_string())
    }
}

fn classes_to_text(classes: &[String]) -> String {
    classes.join("\n")
}

fn classes_from_text(text: &str) -> Vec<String> {
    if text.is_empty() {
        Vec::new()
    } else {
        text.lines().map(str::to_string).collect()
    }
}

impl DiagGmm {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("ubm");
        c.put_array1("weights", &self.weights);
        c.put_array2("means", &self.means);
        c.put_array2("variances", &self.variances);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("ubm")?;
        let gmm = DiagGmm {
            weights: c.array1("weights")?,
            means: c.array2("means")?,
            variances: c.array2("variances")?,
        };
        if gmm.weights.len() != gmm.means.nrows() || gmm.means.dim() != gmm.variances.dim() {
            return Err(Error::ModelFile("inconsistent mixture dims".into()));
        }
        Ok(gmm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load_model(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl TMatrix {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("tv");
        let t = self.matrix();
        c.put_tensor(
            "t",
            vec![t.nrows(), t.ncols()],
            t.iter().cloned().collect(),
        );
        c.put_tensor(
            "mixture_dims",
            vec![2],
            vec![self.n_components() as f64, self.dims() as f64],
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("tv")?;
        let t = c.array2("t")?;
        let dims = c.array1("mixture_dims")?;
        if dims.len() != 2 {
            return Err(Error::ModelFile("bad mixture_dims section".into()));
        }
        TMatrix::new(t, dims[0] as usize, dims[1] as usize)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load_model(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl ProjectionModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("projection");
        c.put_array2("lda", &self.lda);
        c.put_array2("wccn", &self.wccn);
        c.put_text("classes", &classes_to_text(&self.classes));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("projection")?;
        Ok(Self {
            lda: c.array2("lda")?,
            wccn: c.array2("wccn")?,
            classes: classes_from_text(c.text("classes")?),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load_model(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl ClassModels {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("class-models");
        c.put_array2("models", &self.models);
        c.put_text("classes", &classes_to_text(&self.classes));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("class-models")?;
        let models = c.array2("models")?;
        let classes = classes_from_text(c.text("classes")?);
        if models.nrows() != classes.len() {
            return Err(Error::ModelFile("model rows != class count".into()));
        }
        Ok(Self { models, classes })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load_model(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

impl FusionModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("fusion");
        c.put_array1("alphas", &self.alphas);
        c.put_array1("beta", &self.beta);
        c.put_text("classes", &classes_to_text(&self.classes));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("fusion")?;
        let model = Self {
            alphas: c.array1("alphas")?,
            beta: c.array1("beta")?,
            classes: classes_from_text(c.text("classes")?),
        };
        if model.beta.len() != model.classes.len() {
            return Err(Error::ModelFile("offset dims != class count".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load_model(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

fn spec_to_text(spec: &NetworkSpec) -> String {
    let mut out = format!("input {} {} {}\n", spec.input.0, spec.input.1, spec.input.2);
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                pad,
                stride,
            } => {
                out.push_str(&format!(
                    "conv {out_channels} {} {} {pad} {stride}\n",
                    kernel.0, kernel.1
                ));
            }
            LayerSpec::BatchNorm => out.push_str("batchnorm\n"),
            LayerSpec::Relu => out.push_str("relu\n"),
            LayerSpec::MaxPool { size } => out.push_str(&format!("maxpool {size}\n")),
            LayerSpec::Dropout { rate } => out.push_str(&format!("dropout {rate}\n")),
            LayerSpec::GlobalAveragePool => out.push_str("gap\n"),
            LayerSpec::Softmax => out.push_str("softmax\n"),
        }
    }
    out
}

fn spec_from_text(text: &str) -> Result<NetworkSpec> {
    let bad = |line: &str| Error::ModelFile(format!("bad network spec line '{line}'"));
    let mut lines = text.lines();
    let input_line = lines.next().ok_or_else(|| bad("<empty>"))?;
    let parts: Vec<&str> = input_line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "input" {
        return Err(bad(input_line));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad(input_line));
    let input = (dim(parts[1])?, dim(parts[2])?, dim(parts[3])?);
    let mut layers = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(line))
        };
        let layer = match parts[0] {
            "conv" if parts.len() == 6 => LayerSpec::Conv {
                out_channels: num(1)?,
                kernel: (num(2)?, num(3)?),
                pad: num(4)?,
                stride: num(5)?,
            },
            "batchnorm" => LayerSpec::BatchNorm,
            "relu" => LayerSpec::Relu,
            "maxpool" if parts.len() == 2 => LayerSpec::MaxPool { size: num(1)? },
            "dropout" if parts.len() == 2 => LayerSpec::Dropout {
                rate: parts[1].parse().map_err(|_| bad(line))?,
            },
            "gap" => LayerSpec::GlobalAveragePool,
            "softmax" => LayerSpec::Softmax,
            _ => return Err(bad(line)),
        };
        layers.push(layer);
    }
    Ok(NetworkSpec { input, layers })
}

impl Network {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("network");
        c.put_text("spec", &spec_to_text(&self.spec));
        for (i, p) in self.params.iter().enumerate() {
            match p {
                LayerParams::Conv { w, b } => {
                    c.put_array4(&format!("layer{i}.w"), w);
                    c.put_array1(&format!("layer{i}.b"), b);
                }
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    c.put_array1(&format!("layer{i}.gamma"), gamma);
                    c.put_array1(&format!("layer{i}.beta"), beta);
                    c.put_array1(&format!("layer{i}.running_mean"), running_mean);
                    c.put_array1(&format!("layer{i}.running_var"), running_var);
                }
                LayerParams::None => {}
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("network")?;
        let spec = spec_from_text(c.text("spec")?)?;
        // an init gives correctly shaped params to overwrite, and validates
        let mut net = Network::init(spec, 0)?;
        for (i, p) in net.params.iter_mut().enumerate() {
            match p {
                LayerParams::Conv { w, b } => {
                    let lw = c.array4(&format!("layer{i}.w"))?;
                    let lb = c.array1(&format!("layer{i}.b"))?;
                    if lw.dim() != w.dim() || lb.len() != b.len() {
                        return Err(Error::ModelFile(format!(
                            "layer {i} tensor dims do not match the spec"
                        )));
                    }
                    *w = lw;
                    *b = lb;
                }
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let n = gamma.len();
                    let lg = c.array1(&format!("layer{i}.gamma"))?;
                    let lb = c.array1(&format!("layer{i}.beta"))?;
                    let lm = c.array1(&format!("layer{i}.running_mean"))?;
                    let lv = c.array1(&format!("layer{i}.running_var"))?;
                    if [&lg, &lb, &lm, &lv].iter().any(|a| a.len() != n) {
                        return Err(Error::ModelFile(format!(
                            "layer {i} batchnorm dims do not match the spec"
                        )));
                    }
                    *gamma = lg;
                    *beta = lb;
                    *running_mean = lm;
                    *running_var = lv;
                }
                LayerParams::None => {}
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load_model(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
