//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng;

use super::graph::{Fault, Graph, Var};
use super::layers::{forward_layers, orthogonal, LayerSpec};
use super::{AutodiffError, Tensor};
use crate::seed::{derive_rng, SimRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Coordinates sampled per tensor; tensors at most this large are checked
    /// exhaustively.
    pub coords_per_tensor: usize,
    /// Magnitudes below this are compared absolutely.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            h: 1e-4,
            tol: 1e-4,
            coords_per_tensor: 48,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckResult {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Tensor and flat index of the worst coordinate.
    pub worst: (usize, usize),
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of the scalar built by `build` against central
/// differences. `build` receives one handle per entry of `params`.
pub fn check_gradients<F>(
    params: &mut [Tensor],
    build: F,
    cfg: &GradcheckConfig,
    rng: &mut SimRng,
    fault: Option<Fault>,
) -> Result<GradcheckResult, AutodiffError>
where
    F: for<'p> Fn(&mut Graph<'p>, &[Var]) -> Result<Var, AutodiffError>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        if let Some(f) = fault {
            g.inject_fault(f);
        }
        let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
        let loss = build(&mut g, &vars)?;
        let mut grads = g.backward(loss)?;
        vars.iter()
            .zip(params.iter())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| vec![0.0; p.len()]))
            .collect()
    };
    let eval = |params: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };
    let mut result = GradcheckResult {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: (0, 0),
    };
    for t in 0..params.len() {
        let n = params[t].len();
        let coords: Vec<usize> = if n <= cfg.coords_per_tensor {
            (0..n).collect()
        } else {
            sample(rng, n, cfg.coords_per_tensor).into_vec()
        };
        for i in coords {
            let orig = params[t].data()[i];
            params[t].data_mut()[i] = orig + cfg.h;
            let up = eval(params)?;
            params[t].data_mut()[i] = orig - cfg.h;
            let down = eval(params)?;
            params[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.h);
            let err = relative_error(analytic[t][i], numeric, cfg.floor);
            if err > result.max_rel_error || err.is_nan() {
                result.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                result.worst = (t, i);
            }
            result.coords_checked += 1;
        }
    }
    Ok(result)
}

fn random_tensor(shape: Vec<usize>, scale: f64, rng: &mut SimRng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    Tensor::new(shape, data).expect("sized from shape")
}

/// Initial parameters for `specs` plus a random batched input, followed by a
/// fixed projection that turns the output into a scalar.
pub fn random_stack_case(
    specs: &[LayerSpec],
    input_shape: &[usize],
    batch: usize,
    rng: &mut SimRng,
) -> Result<Vec<Tensor>, AutodiffError> {
    let mut tensors = Vec::new();
    for spec in specs {
        for (j, shape) in spec.param_shapes().into_iter().enumerate() {
            if j == 0 {
                let (r, c) = match *spec {
                    LayerSpec::Dense { input, output } => (input, output),
                    LayerSpec::Conv2d {
                        in_ch,
                        out_ch,
                        kernel,
                        ..
                    } => (out_ch, in_ch * kernel * kernel),
                    _ => unreachable!("only parameterised layers have shapes"),
                };
                tensors.push(Tensor::new(shape, orthogonal(r, c, 2f64.sqrt(), rng))?);
            } else {
                tensors.push(random_tensor(shape, 0.1, rng));
            }
        }
    }
    let mut full = vec![batch];
    full.extend_from_slice(input_shape);
    tensors.push(random_tensor(full, 1.0, rng));
    let mut out_shape = input_shape.to_vec();
    for s in specs {
        out_shape = s.output_shape(&out_shape)?;
    }
    let mut proj = vec![batch];
    proj.extend(out_shape);
    tensors.push(random_tensor(proj, 1.0, rng));
    Ok(tensors)
}

/// Checks a sequential stack: parameters and the input are all perturbed;
/// the loss is the sum of outputs weighted by a fixed random projection.
pub fn check_stack(
    specs: &[LayerSpec],
    input_shape: &[usize],
    seed: u64,
    cfg: &GradcheckConfig,
    fault: Option<Fault>,
) -> Result<GradcheckResult, AutodiffError> {
    let mut rng = derive_rng(seed, &[0x6772_6164]);
    let mut tensors = random_stack_case(specs, input_shape, 2, &mut rng)?;
    let n_params = tensors.len() - 2;
    let proj = tensors.pop().expect("projection");
    let specs = specs.to_vec();
    check_gradients(
        &mut tensors,
        |g, vars| {
            let out = forward_layers(&specs, g, vars[n_params], &vars[..n_params])?;
            let out_shape = g.value(out).shape().to_vec();
            let flat = g.reshape(out, vec![out_shape.iter().product()])?;
            let w = g.input(proj.clone().reshape(vec![proj.len()])?);
            let weighted = g.mul(flat, w)?;
            Ok(g.sum(weighted))
        },
        cfg,
        &mut rng,
        fault,
    )
}

/// One sequential stack per layer kind, sized for a fast check.
pub fn single_layer_cases() -> Vec<(&'static str, Vec<LayerSpec>, Vec<usize>)> {
    vec![
        (
            "conv2d",
            vec![LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 3,
                kernel: 3,
                stride: 1,
                pad: 0,
            }],
            vec![2, 5, 5],
        ),
        (
            "conv2d-strided-padded",
            vec![LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 2,
                kernel: 3,
                stride: 2,
                pad: 1,
            }],
            vec![2, 5, 4],
        ),
        (
            "dense",
            vec![LayerSpec::Dense {
                input: 6,
                output: 4,
            }],
            vec![6],
        ),
        ("tanh", vec![LayerSpec::Tanh], vec![7]),
        ("flatten", vec![LayerSpec::Flatten], vec![2, 3, 3]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_passes() {
        let cfg = GradcheckConfig::default();
        for (name, specs, shape) in single_layer_cases() {
            for seed in 0..3 {
                let r = check_stack(&specs, &shape, seed, &cfg, None).unwrap();
                assert!(r.max_rel_error < cfg.tol, "{name} seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn injected_tanh_fault_is_caught() {
        let cfg = GradcheckConfig::default();
        let r = check_stack(&[LayerSpec::Tanh], &[7], 1, &cfg, Some(Fault::TanhGrad)).unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(1e-9, 0.0, 1e-6), 1e-3);
    }
}
