//! Compact architecture notation.
//!
//! Comma-separated layers: `C:OxIxKHxKW` convolution (optional `/sS` stride
//! and `/pP` padding suffixes), `F:INxOUT` dense, `R` ReLU, `M:K` or
//! `M:KxS` 2-D max pooling, `M3:KCxKHxKW` channel-spatial max pooling,
//! `BN` batch norm, `D:RATE` dropout, `FL` flatten.

use kbnet_core::nn::{Conv2dSpec, LayerKind, Model};

use crate::fail::{input, Result};

fn dims(s: &str, n: usize, token: &str) -> Result<Vec<usize>> {
    let v: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| input(format!("layer `{token}`: expected {n} numbers separated by `x`")))?;
    if v.len() != n {
        return Err(input(format!("layer `{token}`: expected {n} numbers separated by `x`")));
    }
    Ok(v)
}

/// Parses `spec` for inputs of `input_shape`. Batch-norm channels come from
/// the running shape.
pub fn parse_arch(spec: &str, input_shape: &[usize]) -> Result<Vec<LayerKind>> {
    let mut shape = input_shape.to_vec();
    let mut kinds = Vec::new();
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (head, body) = token.split_once(':').unwrap_or((token, ""));
        let kind = match head {
            "C" => {
                let mut parts = body.split('/');
                let d = dims(parts.next().unwrap_or(""), 4, token)?;
                let mut spec = Conv2dSpec::new(d[0], d[1], d[2], d[3]);
                for p in parts {
                    let (flag, v) = p.split_at(1.min(p.len()));
                    let v: usize = v.parse().map_err(|_| input(format!("layer `{token}`: bad suffix `/{p}`")))?;
                    spec = match flag {
                        "s" => spec.stride(v),
                        "p" => spec.padding(v),
                        _ => return Err(input(format!("layer `{token}`: unknown suffix `/{p}`"))),
                    };
                }
                LayerKind::Conv2d(spec)
            }
            "F" => {
                let d = dims(body, 2, token)?;
                LayerKind::Dense {
                    inputs: d[0],
                    outputs: d[1],
                    bias: true,
                }
            }
            "R" if body.is_empty() => LayerKind::Relu,
            "FL" if body.is_empty() => LayerKind::Flatten,
            "BN" if body.is_empty() => LayerKind::BatchNorm {
                channels: *shape.first().ok_or_else(|| input("BN needs a channel dimension"))?,
            },
            "M" => {
                let d: Vec<usize> = if body.contains('x') { dims(body, 2, token)? } else { dims(body, 1, token)? };
                let stride = *d.get(1).unwrap_or(&d[0]);
                LayerKind::MaxPool2d {
                    kernel_h: d[0],
                    kernel_w: d[0],
                    stride,
                }
            }
            "M3" => {
                let d = dims(body, 3, token)?;
                LayerKind::MaxPool3d {
                    kernel_c: d[0],
                    kernel_h: d[1],
                    kernel_w: d[2],
                }
            }
            "D" => LayerKind::Dropout {
                rate: body.parse().map_err(|_| input(format!("layer `{token}`: bad dropout rate")))?,
            },
            _ => return Err(input(format!("unknown layer `{token}`"))),
        };
        shape = kind
            .output_shape(&shape)
            .map_err(|e| input(format!("layer `{token}` does not fit input {shape:?}: {e}")))?;
        kinds.push(kind);
    }
    if kinds.is_empty() {
        return Err(input("architecture has no layers"));
    }
    Ok(kinds)
}

pub fn build_model(spec: &str, input_shape: &[usize], seed: u64) -> Result<Model<f32>> {
    let kinds = parse_arch(spec, input_shape)?;
    Model::new(input_shape, kinds, seed).map_err(|e| input(format!("architecture `{spec}`: {e}")))
}
