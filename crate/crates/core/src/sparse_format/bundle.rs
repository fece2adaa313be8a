use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::csr::{from_csr, to_csr_with, ColumnIndices, CsrMatrix, IndexWidth};
use super::size::{layer_size_bytes, weight_matrix_dims, StorageMode};
use crate::error::{Error, Result};
use crate::gnet::{ExitPool, GNetModel, PoolPlan};
use crate::nn::{Conv2dSpec, Layer, LayerKind, Model, Tensor};

pub const BUNDLE_VERSION: u32 = 1;

const MANIFEST: &str = "manifest";
const WEIGHTS: &str = "weights.bin";

fn checksum(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn dims(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Default)]
struct Writer {
    manifest: String,
    blob: Vec<u8>,
}

impl Writer {
    fn line(&mut self, s: impl AsRef<str>) {
        self.manifest.push_str(s.as_ref());
        self.manifest.push('\n');
    }

    fn blob(&mut self, layer: usize, name: &str, dtype: &str, bytes: Vec<u8>) {
        let offset = self.blob.len();
        let sum = checksum(&bytes);
        let len = bytes.len();
        self.blob.extend(bytes);
        self.line(format!(
            "blob layer={layer} name={name} dtype={dtype} offset={offset} length={len} checksum={sum}"
        ));
    }

    fn f32s(&mut self, layer: usize, name: &str, v: &[f32]) {
        let bytes = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.blob(layer, name, "f32", bytes);
    }

    fn model(&mut self, tag: &str, model: &Model<f32>) -> Result<()> {
        self.line(format!("{tag} input={} layers={}", dims(model.input_shape()), model.len()));
        for (i, l) in model.layers().iter().enumerate() {
            let storage = match (l.weight(), weight_matrix_dims(l.kind())) {
                (Some(_), Some(_))
                    if layer_size_bytes(l, StorageMode::Csr) < layer_size_bytes(l, StorageMode::Dense) =>
                {
                    StorageMode::Csr
                }
                _ => StorageMode::Dense,
            };
            let sparsity = model.sparsity(i).map_or_else(|| "none".to_string(), |s| format!("{s:?}"));
            self.line(format!(
                "layer {i} {} storage={} sparsity={sparsity} frozen={}",
                kind_fields(l.kind()),
                match storage {
                    StorageMode::Dense => "dense",
                    StorageMode::Csr => "csr",
                },
                model.is_frozen(i)
            ));
            let mut slots = 0..l.params().len();
            if storage == StorageMode::Csr {
                slots.next();
                let (rows, cols) = weight_matrix_dims(l.kind()).expect("prunable");
                let w = Tensor::new(vec![rows, cols], l.params()[0].data().to_vec())?;
                let width = if cols > u16::MAX as usize {
                    IndexWidth::U32
                } else {
                    IndexWidth::U16
                };
                let m = to_csr_with(&w, width)?;
                self.f32s(i, "values", m.values());
                match m.col_indices() {
                    ColumnIndices::U16(v) => {
                        self.blob(i, "col_indices", "u16", v.iter().flat_map(|x| x.to_le_bytes()).collect())
                    }
                    ColumnIndices::U32(v) => {
                        self.blob(i, "col_indices", "u32", v.iter().flat_map(|x| x.to_le_bytes()).collect())
                    }
                }
                self.blob(
                    i,
                    "row_extents",
                    "u32",
                    m.row_extents().iter().flat_map(|x| x.to_le_bytes()).collect(),
                );
            }
            for s in slots {
                self.f32s(i, &format!("param{s}"), l.params()[s].data());
            }
        }
        Ok(())
    }
}

fn kind_fields(kind: &LayerKind) -> String {
    match *kind {
        LayerKind::Dense { inputs, outputs, bias } => format!("kind=dense inputs={inputs} outputs={outputs} bias={bias}"),
        LayerKind::Conv2d(s) => format!(
            "kind=conv2d out={} in={} kh={} kw={} stride={} padding={} bias={}",
            s.out_channels, s.in_channels, s.kernel_h, s.kernel_w, s.stride, s.padding, s.bias
        ),
        LayerKind::Relu => "kind=relu".into(),
        LayerKind::MaxPool2d { kernel_h, kernel_w, stride } => {
            format!("kind=maxpool2d kh={kernel_h} kw={kernel_w} stride={stride}")
        }
        LayerKind::MaxPool3d { kernel_c, kernel_h, kernel_w } => {
            format!("kind=maxpool3d kc={kernel_c} kh={kernel_h} kw={kernel_w}")
        }
        LayerKind::Flatten => "kind=flatten".into(),
        LayerKind::BatchNorm { channels } => format!("kind=batchnorm channels={channels}"),
        LayerKind::Dropout { rate } => format!("kind=dropout rate={rate:?}"),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `manifest` and `weights.bin` into `dir`. Each file is replaced
/// atomically; the manifest goes last so readers never see it ahead of its
/// blob.
pub fn save_bundle(model: &Model<f32>, gnet: Option<&GNetModel<f32>>, dir: &Path) -> Result<()> {
    let mut w = Writer::default();
    w.model("model", model)?;
    if let Some(g) = gnet {
        let (h0, w0) = g.plan.target;
        w.line(format!("gnet exits={} target={h0},{w0} budget={}", g.plan.len(), g.plan.budget));
        for (j, e) in g.plan.exits.iter().enumerate() {
            w.line(format!(
                "exit {j} layer={} source={} kernel={} pooled={}",
                e.layer,
                dims(&e.source),
                dims(&e.kernel),
                dims(&e.pooled)
            ));
        }
        w.model("classifier", &g.classifier)?;
    }
    w.line("end");
    let header = format!(
        "kbnet-bundle\nversion {BUNDLE_VERSION}\nweights length={} checksum={}\n",
        w.blob.len(),
        checksum(&w.blob)
    );
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(WEIGHTS), &w.blob)?;
    let mut manifest = header;
    let _ = write!(manifest, "{}", w.manifest);
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

struct Line<'a> {
    number: usize,
    head: Vec<&'a str>,
    fields: BTreeMap<&'a str, &'a str>,
}

impl<'a> Line<'a> {
    fn parse(number: usize, text: &'a str) -> Self {
        let mut head = Vec::new();
        let mut fields = BTreeMap::new();
        for tok in text.split_whitespace() {
            match tok.split_once('=') {
                Some((k, v)) => {
                    fields.insert(k, v);
                }
                None => head.push(tok),
            }
        }
        Self { number, head, fields }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::BundleParse {
            line: self.number,
            message: message.into(),
        }
    }

    fn keyword(&self) -> &'a str {
        self.head.first().copied().unwrap_or("")
    }

    fn expect(&self, kw: &str) -> Result<()> {
        if self.keyword() == kw {
            Ok(())
        } else {
            Err(self.err(format!("expected `{kw}`, found `{}`", self.keyword())))
        }
    }

    fn str(&self, key: &str) -> Result<&'a str> {
        self.fields.get(key).copied().ok_or_else(|| self.err(format!("missing `{key}`")))
    }

    fn num<N: std::str::FromStr>(&self, key: &str) -> Result<N> {
        let s = self.str(key)?;
        s.parse().map_err(|_| self.err(format!("bad value `{s}` for `{key}`")))
    }

    fn dims(&self, key: &str) -> Result<Vec<usize>> {
        let s = self.str(key)?;
        s.split(',')
            .map(|p| p.parse().map_err(|_| self.err(format!("bad dimensions `{s}` for `{key}`"))))
            .collect()
    }

    fn dims3(&self, key: &str) -> Result<[usize; 3]> {
        self.dims(key)?
            .try_into()
            .map_err(|_| self.err(format!("`{key}` needs three dimensions")))
    }
}

struct Reader<'a> {
    lines: Vec<Line<'a>>,
    pos: usize,
    blob: &'a [u8],
    last_line: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<&Line<'a>> {
        let line = self.lines.get(self.pos).ok_or(Error::BundleParse {
            line: self.last_line + 1,
            message: "unexpected end of manifest".into(),
        })?;
        self.pos += 1;
        Ok(line)
    }

    fn peek_keyword(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|l| l.keyword())
    }

    fn blob(&mut self, layer: usize, name: &str, dtype: &str) -> Result<&'a [u8]> {
        let blob = self.blob;
        let line = self.next()?;
        line.expect("blob")?;
        if line.num::<usize>("layer")? != layer || line.str("name")? != name {
            return Err(line.err(format!("expected blob `{name}` of layer {layer}")));
        }
        if line.str("dtype")? != dtype {
            return Err(line.err(format!("blob `{name}` must have dtype {dtype}")));
        }
        let start: usize = line.num("offset")?;
        let len: usize = line.num("length")?;
        let region = format!("layer {layer} {name}");
        let end = start.checked_add(len).ok_or_else(|| line.err("blob range overflows"))?;
        if end > blob.len() {
            return Err(Error::BundleTruncated {
                region,
                start,
                end,
                len: blob.len(),
            });
        }
        let bytes = &blob[start..end];
        if checksum(bytes) != line.str("checksum")? {
            return Err(Error::BundleChecksum { region });
        }
        Ok(bytes)
    }

    fn f32s(&mut self, layer: usize, name: &str, expected: usize) -> Result<Vec<f32>> {
        let number = self.lines.get(self.pos).map_or(0, |l| l.number);
        let bytes = self.blob(layer, name, "f32")?;
        if bytes.len() != expected * 4 {
            return Err(Error::BundleParse {
                line: number,
                message: format!("blob `{name}` holds {} bytes, expected {}", bytes.len(), expected * 4),
            });
        }
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u32s(&mut self, layer: usize, name: &str) -> Result<Vec<u32>> {
        let bytes = self.blob(layer, name, "u32")?;
        Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn layer_kind(line: &Line) -> Result<LayerKind> {
        let flag = |k: &str| -> Result<bool> {
            match line.str(k)? {
                "true" => Ok(true),
                "false" => Ok(false),
                v => Err(line.err(format!("bad boolean `{v}` for `{k}`"))),
            }
        };
        Ok(match line.str("kind")? {
            "dense" => LayerKind::Dense {
                inputs: line.num("inputs")?,
                outputs: line.num("outputs")?,
                bias: flag("bias")?,
            },
            "conv2d" => LayerKind::Conv2d(
                Conv2dSpec::new(line.num("out")?, line.num("in")?, line.num("kh")?, line.num("kw")?)
                    .stride(line.num("stride")?)
                    .padding(line.num("padding")?)
                    .bias(flag("bias")?),
            ),
            "relu" => LayerKind::Relu,
            "maxpool2d" => LayerKind::MaxPool2d {
                kernel_h: line.num("kh")?,
                kernel_w: line.num("kw")?,
                stride: line.num("stride")?,
            },
            "maxpool3d" => LayerKind::MaxPool3d {
                kernel_c: line.num("kc")?,
                kernel_h: line.num("kh")?,
                kernel_w: line.num("kw")?,
            },
            "flatten" => LayerKind::Flatten,
            "batchnorm" => LayerKind::BatchNorm {
                channels: line.num("channels")?,
            },
            "dropout" => LayerKind::Dropout { rate: line.num("rate")? },
            k => return Err(line.err(format!("unknown layer kind `{k}`"))),
        })
    }

    fn model(&mut self, tag: &str) -> Result<Model<f32>> {
        let (input, count) = {
            let line = self.next()?;
            line.expect(tag)?;
            (line.dims("input")?, line.num::<usize>("layers")?)
        };
        let mut layers = Vec::with_capacity(count);
        let mut meta = Vec::with_capacity(count);
        for i in 0..count {
            let (kind, csr, sparsity, frozen, number) = {
                let line = self.next()?;
                line.expect("layer")?;
                if line.head.get(1).and_then(|s| s.parse::<usize>().ok()) != Some(i) {
                    return Err(line.err(format!("expected layer {i}")));
                }
                let kind = Self::layer_kind(line)?;
                let csr = match line.str("storage")? {
                    "dense" => false,
                    "csr" => true,
                    s => return Err(line.err(format!("unknown storage `{s}`"))),
                };
                let sparsity = match line.str("sparsity")? {
                    "none" => None,
                    _ => Some(line.num::<f64>("sparsity")?),
                };
                let frozen = line.str("frozen")? == "true";
                (kind, csr, sparsity, frozen, line.number)
            };
            let shapes = kind.param_shapes();
            let mut params = Vec::with_capacity(shapes.len());
            let mut slots = 0..shapes.len();
            if csr {
                slots.next();
                let (rows, cols) = weight_matrix_dims(&kind).ok_or(Error::BundleParse {
                    line: number,
                    message: "csr storage on a layer without weights".into(),
                })?;
                let values_line = self.lines.get(self.pos).map_or(0, |l| l.number);
                let values_len = self.lines.get(self.pos).and_then(|l| l.num::<usize>("length").ok()).unwrap_or(0) / 4;
                let values = self.f32s(i, "values", values_len)?;
                let idx_dtype = self.lines.get(self.pos).and_then(|l| l.fields.get("dtype").copied());
                let col_indices = match idx_dtype {
                    Some("u32") => ColumnIndices::U32(self.u32s(i, "col_indices")?),
                    _ => {
                        let bytes = self.blob(i, "col_indices", "u16")?;
                        ColumnIndices::U16(
                            bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
                        )
                    }
                };
                let extents = self.u32s(i, "row_extents")?;
                let m = CsrMatrix::from_parts(rows, cols, values, col_indices, extents).map_err(|e| {
                    Error::BundleParse {
                        line: values_line,
                        message: e.to_string(),
                    }
                })?;
                params.push(from_csr(&m).reshape(&shapes[0])?);
            }
            for s in slots {
                let n = shapes[s].iter().product();
                let v = self.f32s(i, &format!("param{s}"), n)?;
                params.push(Tensor::new(shapes[s].clone(), v)?);
            }
            layers.push(Layer::new(kind, params)?);
            meta.push((sparsity, frozen));
        }
        let mut model = Model::from_layers(&input, layers)?;
        for (i, (s, f)) in meta.into_iter().enumerate() {
            model.set_sparsity(i, s);
            model.set_frozen(i, f);
        }
        Ok(model)
    }
}

/// Reads a bundle written by [`save_bundle`].
pub fn load_bundle(dir: &Path) -> Result<(Model<f32>, Option<GNetModel<f32>>)> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS);
    let blob = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let lines: Vec<Line> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Line::parse(i + 1, l))
        .collect();
    let last_line = text.lines().count();
    let mut r = Reader {
        lines,
        pos: 0,
        blob: &blob,
        last_line,
    };
    r.next()?.expect("kbnet-bundle")?;
    {
        let line = r.next()?;
        line.expect("version")?;
        let found: u32 = line
            .head
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| line.err("missing version number"))?;
        if found != BUNDLE_VERSION {
            return Err(Error::BundleVersion {
                found,
                expected: BUNDLE_VERSION,
            });
        }
    }
    let file_sum = {
        let line = r.next()?;
        line.expect("weights")?;
        let len: usize = line.num("length")?;
        if blob.len() < len {
            return Err(Error::BundleTruncated {
                region: WEIGHTS.into(),
                start: 0,
                end: len,
                len: blob.len(),
            });
        }
        if blob.len() != len {
            return Err(Error::BundleChecksum { region: WEIGHTS.into() });
        }
        line.str("checksum")?.to_string()
    };
    let model = r.model("model")?;
    let gnet = if r.peek_keyword() == Some("gnet") {
        let (n, target, budget) = {
            let line = r.next()?;
            let t = line.dims("target")?;
            if t.len() != 2 {
                return Err(line.err("`target` needs two dimensions"));
            }
            (line.num::<usize>("exits")?, (t[0], t[1]), line.num::<usize>("budget")?)
        };
        let mut exits = Vec::with_capacity(n);
        for _ in 0..n {
            let line = r.next()?;
            line.expect("exit")?;
            exits.push(ExitPool {
                layer: line.num("layer")?,
                source: line.dims3("source")?,
                kernel: line.dims3("kernel")?,
                pooled: line.dims3("pooled")?,
            });
        }
        let plan = PoolPlan { exits, target, budget };
        let classifier = r.model("classifier")?;
        Some(GNetModel::from_parts(plan, classifier)?)
    } else {
        None
    };
    r.next()?.expect("end")?;
    if checksum(&blob) != file_sum {
        return Err(Error::BundleChecksum { region: WEIGHTS.into() });
    }
    Ok((model, gnet))
}
