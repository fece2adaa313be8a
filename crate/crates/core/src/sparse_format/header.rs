use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::csr::{to_csr_with, ColumnIndices, CsrMatrix, IndexWidth};
use super::size::weight_matrix_dims;
use crate::error::{Error, Result};
use crate::nn::{Layer, LayerKind, Model, Tensor};

/// Shortest C literal that reads back as the same `f32`, e.g. `1.0f`.
pub fn format_f32_literal(v: f32) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::InvalidArgument(format!("cannot emit non-finite value {v} as a C literal")));
    }
    Ok(format!("{v:?}f"))
}

fn join<I: IntoIterator<Item = String>>(items: I) -> String {
    let v: Vec<String> = items.into_iter().collect();
    if v.is_empty() {
        "0".into()
    } else {
        v.join(",")
    }
}

fn float_array(out: &mut String, ty_name: &str, values: &[f32]) -> Result<()> {
    let body = join(values.iter().map(|&v| format_f32_literal(v)).collect::<Result<Vec<_>>>()?);
    let _ = writeln!(out, "static const float {ty_name}[{}] = {{{body}}};", values.len().max(1));
    Ok(())
}

fn csr_arrays(out: &mut String, p: &str, m: &CsrMatrix<f32>) -> Result<()> {
    let up = p.to_uppercase();
    let _ = writeln!(out, "#define {up}_ROWS {}", m.rows());
    let _ = writeln!(out, "#define {up}_COLS {}", m.cols());
    let _ = writeln!(out, "#define {up}_NNZ {}", m.nnz());
    out.push('\n');
    float_array(out, &format!("{p}_values"), m.values())?;
    let (ty, idx) = match m.col_indices() {
        ColumnIndices::U16(v) => ("uint16_t", join(v.iter().map(u16::to_string))),
        ColumnIndices::U32(v) => ("uint32_t", join(v.iter().map(u32::to_string))),
    };
    let _ = writeln!(out, "static const {ty} {p}_col_indices[{}] = {{{idx}}};", m.nnz().max(1));
    let ext = join(m.row_extents().iter().map(u32::to_string));
    let _ = writeln!(out, "static const uint32_t {p}_row_extents[{}] = {{{ext}}};", m.rows() + 1);
    Ok(())
}

fn layer_header(idx: usize, layer: &Layer<f32>) -> Result<Option<String>> {
    let p = format!("layer_{idx}");
    let up = p.to_uppercase();
    let mut out = String::new();
    let _ = writeln!(out, "#ifndef KBNET_{up}_H");
    let _ = writeln!(out, "#define KBNET_{up}_H");
    out.push('\n');
    let _ = writeln!(out, "#include <stdint.h>");
    out.push('\n');
    match *layer.kind() {
        LayerKind::Dense { inputs, outputs, .. } => {
            let _ = writeln!(out, "#define {up}_INPUTS {inputs}");
            let _ = writeln!(out, "#define {up}_OUTPUTS {outputs}");
        }
        LayerKind::Conv2d(s) => {
            let _ = writeln!(out, "#define {up}_OUT_CHANNELS {}", s.out_channels);
            let _ = writeln!(out, "#define {up}_IN_CHANNELS {}", s.in_channels);
            let _ = writeln!(out, "#define {up}_KERNEL_H {}", s.kernel_h);
            let _ = writeln!(out, "#define {up}_KERNEL_W {}", s.kernel_w);
            let _ = writeln!(out, "#define {up}_STRIDE {}", s.stride);
            let _ = writeln!(out, "#define {up}_PADDING {}", s.padding);
        }
        LayerKind::BatchNorm { channels } => {
            let _ = writeln!(out, "#define {up}_CHANNELS {channels}");
            out.push('\n');
            for (name, t) in ["gamma", "beta", "running_mean", "running_var"].iter().zip(layer.params()) {
                float_array(&mut out, &format!("{p}_{name}"), t.data())?;
            }
            out.push('\n');
            let _ = writeln!(out, "#endif");
            return Ok(Some(out));
        }
        _ => return Ok(None),
    }
    let (rows, cols) = weight_matrix_dims(layer.kind()).expect("prunable layer");
    let w = layer.weight().expect("prunable layer weight");
    let matrix = Tensor::new(vec![rows, cols], w.data().to_vec())?;
    let width = if cols > u16::MAX as usize {
        IndexWidth::U32
    } else {
        IndexWidth::U16
    };
    csr_arrays(&mut out, &p, &to_csr_with(&matrix, width)?)?;
    if let Some(b) = layer.bias() {
        float_array(&mut out, &format!("{p}_bias"), b.data())?;
    }
    out.push('\n');
    let _ = writeln!(out, "#endif");
    Ok(Some(out))
}

/// Writes one header per weight-carrying layer plus `model.h` including
/// them all. Output is byte-for-byte deterministic per model.
pub fn emit_c_headers(model: &Model<f32>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut includes = Vec::new();
    for (i, l) in model.layers().iter().enumerate() {
        if let Some(text) = layer_header(i, l)? {
            let name = format!("layer_{i}.h");
            let path = out_dir.join(&name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            includes.push(name);
            written.push(path);
        }
    }
    let mut master = String::new();
    let _ = writeln!(master, "#ifndef KBNET_MODEL_H");
    let _ = writeln!(master, "#define KBNET_MODEL_H");
    master.push('\n');
    let _ = writeln!(master, "#define MODEL_NUM_LAYERS {}", model.len());
    let _ = writeln!(master, "#define MODEL_NUM_HEADERS {}", includes.len());
    master.push('\n');
    for inc in &includes {
        let _ = writeln!(master, "#include \"{inc}\"");
    }
    if !includes.is_empty() {
        master.push('\n');
    }
    let _ = writeln!(master, "#endif");
    let path = out_dir.join("model.h");
    fs::write(&path, master).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
