//! Layer stacks with a graph-building forward pass and a graph-free
//! inference path that share the same kernels.

use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::kernels::{self, ConvGeom};
use super::{AutodiffError, Tensor};
use crate::seed::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Dense {
        input: usize,
        output: usize,
    },
    Tanh,
    Flatten,
}

impl LayerSpec {
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![vec![out_ch, in_ch, kernel, kernel], vec![out_ch]],
            LayerSpec::Dense { input, output } => vec![vec![input, output], vec![output]],
            LayerSpec::Tanh | LayerSpec::Flatten => vec![],
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, AutodiffError> {
        match *self {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                let &[c, h, w] = input else {
                    return Err(AutodiffError::ShapeMismatch(format!(
                        "conv expects [C,H,W], got {input:?}"
                    )));
                };
                if c != in_ch {
                    return Err(AutodiffError::ShapeMismatch(format!(
                        "conv expects {in_ch} channels, got {c}"
                    )));
                }
                let geom = ConvGeom {
                    batch: 1,
                    in_ch,
                    h,
                    w,
                    out_ch,
                    k: kernel,
                    stride,
                    pad,
                };
                let (oh, ow) = geom.out_hw().ok_or_else(|| {
                    AutodiffError::ShapeMismatch(format!("kernel {kernel} does not fit {h}x{w}"))
                })?;
                Ok(vec![out_ch, oh, ow])
            }
            LayerSpec::Dense { input: i, output } => {
                if input != [i] {
                    return Err(AutodiffError::ShapeMismatch(format!(
                        "dense expects [{i}], got {input:?}"
                    )));
                }
                Ok(vec![output])
            }
            LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Fills `rows x cols` with a matrix whose rows (or columns, whichever are
/// fewer) are orthonormal, scaled by `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut SimRng) -> Vec<f64> {
    let (n, d) = if rows <= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-10 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain
                * if rows <= cols {
                    basis[r][c]
                } else {
                    basis[c][r]
                };
        }
    }
    out
}

/// Applies `specs` to `x` using already-registered parameter handles, two
/// per parameterised layer (weight then bias).
pub fn forward_layers(
    specs: &[LayerSpec],
    g: &mut Graph<'_>,
    x: Var,
    params: &[Var],
) -> Result<Var, AutodiffError> {
    let needed: usize = specs.iter().map(|s| s.param_shapes().len()).sum();
    if needed != params.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "{needed} parameter handles needed, got {}",
            params.len()
        )));
    }
    let mut h = x;
    let mut p = params.iter().copied();
    for spec in specs {
        h = match *spec {
            LayerSpec::Conv2d { stride, pad, .. } => {
                let (w, b) = (p.next().expect("counted"), p.next().expect("counted"));
                g.conv2d(h, w, b, stride, pad)?
            }
            LayerSpec::Dense { .. } => {
                let (w, b) = (p.next().expect("counted"), p.next().expect("counted"));
                let z = g.matmul(h, w)?;
                g.add_bias(z, b)?
            }
            LayerSpec::Tanh => g.tanh(h),
            LayerSpec::Flatten => g.flatten(h)?,
        };
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Tensor>,
}

/// Sequential stack of layers operating on batched tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Orthogonal weights with `gain`, zero biases. `last_gain` replaces
    /// the gain of the final parameterised layer.
    pub fn new(specs: &[LayerSpec], gain: f64, last_gain: f64, rng: &mut SimRng) -> Self {
        let last_param = specs.iter().rposition(|s| !s.param_shapes().is_empty());
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let g = if Some(i) == last_param {
                    last_gain
                } else {
                    gain
                };
                let params = spec
                    .param_shapes()
                    .into_iter()
                    .enumerate()
                    .map(|(j, shape)| {
                        if j == 0 {
                            let data = match *spec {
                                LayerSpec::Dense { input, output } => {
                                    orthogonal(input, output, g, rng)
                                }
                                LayerSpec::Conv2d {
                                    in_ch,
                                    out_ch,
                                    kernel,
                                    ..
                                } => orthogonal(out_ch, in_ch * kernel * kernel, g, rng),
                                _ => unreachable!("only parameterised layers have shapes"),
                            };
                            Tensor::new(shape, data).expect("shape from spec")
                        } else {
                            Tensor::zeros(shape)
                        }
                    })
                    .collect();
                Layer {
                    spec: spec.clone(),
                    params,
                }
            })
            .collect();
        Network { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, AutodiffError> {
        for l in &layers {
            let shapes = l.spec.param_shapes();
            if shapes.len() != l.params.len()
                || shapes
                    .iter()
                    .zip(&l.params)
                    .any(|(s, p)| s.as_slice() != p.shape())
            {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "parameters do not match {:?}",
                    l.spec
                )));
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.iter_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, AutodiffError> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |s, l| l.spec.output_shape(&s))
    }

    /// Records the forward pass on `g`. Returns the output and the parameter
    /// handles in [`Network::params`] order.
    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p>,
        x: Var,
    ) -> Result<(Var, Vec<Var>), AutodiffError> {
        let handles: Vec<Var> = self.params().map(|p| g.param(p)).collect();
        let out = forward_layers(&self.specs(), g, x, &handles)?;
        Ok((out, handles))
    }

    /// Forward pass without recording a graph.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer.spec {
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                } => {
                    let &[n, c, hh, ww] = h.shape() else {
                        return Err(AutodiffError::ShapeMismatch(format!(
                            "conv input {:?}",
                            h.shape()
                        )));
                    };
                    if c != in_ch {
                        return Err(AutodiffError::ShapeMismatch(format!(
                            "conv expects {in_ch} channels, got {c}"
                        )));
                    }
                    let geom = ConvGeom {
                        batch: n,
                        in_ch,
                        h: hh,
                        w: ww,
                        out_ch,
                        k: kernel,
                        stride,
                        pad,
                    };
                    let (oh, ow) = geom.out_hw().ok_or_else(|| {
                        AutodiffError::ShapeMismatch(format!(
                            "kernel {kernel} does not fit {hh}x{ww}"
                        ))
                    })?;
                    let mut out = vec![0.0; n * out_ch * oh * ow];
                    kernels::conv2d_forward(
                        &geom,
                        h.data(),
                        layer.params[0].data(),
                        layer.params[1].data(),
                        &mut out,
                    );
                    Tensor::new(vec![n, out_ch, oh, ow], out)?
                }
                LayerSpec::Dense { input, output } => {
                    let (m, k) = h.dims2()?;
                    if k != input {
                        return Err(AutodiffError::ShapeMismatch(format!(
                            "dense expects {input} inputs, got {k}"
                        )));
                    }
                    let mut out = vec![0.0; m * output];
                    kernels::matmul(h.data(), layer.params[0].data(), &mut out, m, k, output);
                    let bias = layer.params[1].data();
                    for row in out.chunks_mut(output) {
                        for (o, b) in row.iter_mut().zip(bias) {
                            *o += b;
                        }
                    }
                    Tensor::new(vec![m, output], out)?
                }
                LayerSpec::Tanh => {
                    let mut t = h;
                    t.data_mut().iter_mut().for_each(|v| *v = v.tanh());
                    t
                }
                LayerSpec::Flatten => {
                    let n = h.shape()[0];
                    let rest = h.len() / n.max(1);
                    h.reshape(vec![n, rest])?
                }
            };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = rng_from_seed(1);
        for (r, c) in [(4, 9), (9, 4), (5, 5)] {
            let m = orthogonal(r, c, 1.0, &mut rng);
            #[allow(clippy::type_complexity)]
            let (n, d, get): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if r <= c {
                (r, c, Box::new(|i, k| m[i * c + k]))
            } else {
                (c, r, Box::new(|i, k| m[k * c + i]))
            };
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..d).map(|k| get(i, k) * get(j, k)).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-10, "{r}x{c} ({i},{j}) {dot}");
                }
            }
        }
    }

    #[test]
    fn graph_and_infer_agree() {
        let mut rng = rng_from_seed(2);
        let specs = [
            LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 3,
                kernel: 3,
                stride: 1,
                pad: 0,
            },
            LayerSpec::Tanh,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                input: 12,
                output: 5,
            },
            LayerSpec::Tanh,
            LayerSpec::Dense {
                input: 5,
                output: 2,
            },
        ];
        let net = Network::new(&specs, 2f64.sqrt(), 0.5, &mut rng);
        assert_eq!(net.output_shape(&[2, 4, 4]).unwrap(), vec![2]);
        let x = Tensor::new(
            vec![3, 2, 4, 4],
            (0..96).map(|i| (i as f64 * 0.13).sin()).collect(),
        )
        .unwrap();
        let direct = net.infer(&x).unwrap();
        let mut g = Graph::new();
        let xv = g.input(x);
        let (out, handles) = net.forward(&mut g, xv).unwrap();
        assert_eq!(handles.len(), 6);
        assert_eq!(g.value(out), &direct);
    }
}
