use std::collections::HashMap;

use ndarray::{Array2, Zip};

use super::{Module, Param};

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: HashMap<String, (Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step(&mut self, module: &mut dyn Module) {
        self.step += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let moments = &mut self.moments;
        module.visit_params("", &mut |name, p: &mut Param| {
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (Array2::zeros(p.value.raw_dim()), Array2::zeros(p.value.raw_dim())));
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut layer = Linear {
            weight: Param::new(array![[1.0, -1.0]]),
            bias: Param::new(array![[0.0, 0.0]]),
        };
        layer.weight.grad = array![[0.5, -2.0]];
        layer.bias.grad = array![[0.0, 3.0]];
        let mut adam = Adam::new(0.1);
        adam.step(&mut layer);
        assert!((layer.weight.value[(0, 0)] - 0.9).abs() < 1e-6);
        assert!((layer.weight.value[(0, 1)] + 0.9).abs() < 1e-6);
        assert_eq!(layer.bias.value[(0, 0)], 0.0);
        assert!((layer.bias.value[(0, 1)] + 0.1).abs() < 1e-6);
    }
}
