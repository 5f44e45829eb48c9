use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

/// Adam moment estimates and step counter for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected update in place.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<(), AutodiffError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(AutodiffError::ShapeMismatch(
                    "parameter and gradient sizes differ".into(),
                ));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Piecewise-constant decay: `start - step * floor(round / every)`,
/// never below `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub start: f64,
    pub step: f64,
    pub every: u64,
    pub floor: f64,
}

impl StepSchedule {
    pub fn value(&self, round: u64) -> f64 {
        let k = round.checked_div(self.every).unwrap_or(0) as f64;
        (self.start - self.step * k).max(self.floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut opt = Adam::new([&p]);
        opt.step(&mut [&mut p], &[vec![0.5, -3.0]], 0.1).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 1.9).abs() < 1e-6);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut p = Tensor::vector(vec![5.0]);
        let mut opt = Adam::new([&p]);
        for _ in 0..2000 {
            let g = vec![2.0 * (p.data()[0] - 1.5)];
            opt.step(&mut [&mut p], &[g], 0.05).unwrap();
        }
        assert!((p.data()[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn schedule_steps_and_floors() {
        let s = StepSchedule {
            start: 2e-4,
            step: 5e-5,
            every: 1000,
            floor: 5e-5,
        };
        assert_eq!(s.value(0), 2e-4);
        assert_eq!(s.value(999), 2e-4);
        assert!((s.value(1000) - 1.5e-4).abs() < 1e-18);
        assert_eq!(s.value(10_000), 5e-5);
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut g = vec![vec![3.0], vec![4.0]];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
    }
}
