use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;

use super::{join, Module, Param};

/// Text-conditioned scaled dot-product attention over image regions.
///
/// For one example with text summary `t` and regions `r_i`:
/// `q = t Wq`, `k_i = r_i Wk`, `s_i = q·k_i / sqrt(d_a)`, `w = softmax(s)`,
/// `out = Σ w_i (r_i Wv + bv)`. The value projection maps regions straight to
/// the output width, so the output is a convex combination of the projected
/// regions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPool {
    pub query: Param,
    pub key: Param,
    pub value: Param,
    pub value_bias: Param,
}

pub struct AttentionCache {
    regions: Array3<f64>,
    text: Array2<f64>,
    queries: Array2<f64>,
    keys: Array3<f64>,
    values: Array3<f64>,
    /// Softmax weights, `batch × regions`.
    pub weights: Array2<f64>,
}

impl AttentionPool {
    pub fn new(text_dim: usize, region_dim: usize, attn_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        AttentionPool {
            query: Param::fan_in_uniform(text_dim, attn_dim, text_dim, rng),
            key: Param::fan_in_uniform(region_dim, attn_dim, region_dim, rng),
            value: Param::fan_in_uniform(region_dim, out_dim, region_dim, rng),
            value_bias: Param::fan_in_uniform(1, out_dim, region_dim, rng),
        }
    }

    pub fn attn_dim(&self) -> usize {
        self.query.value.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.value.value.ncols()
    }

    /// Region values before weighting, `regions × out`.
    pub fn project(&self, regions: &Array2<f64>) -> Array2<f64> {
        regions.dot(&self.value.value) + &self.value_bias.value
    }

    /// `regions`: batch × R × D_v, `text`: batch × D_t.
    pub fn forward(&self, regions: &Array3<f64>, text: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let (b, r, _) = regions.dim();
        let scale = 1.0 / (self.attn_dim() as f64).sqrt();
        let queries = text.dot(&self.query.value);
        let mut keys = Array3::zeros((b, r, self.attn_dim()));
        let mut values = Array3::zeros((b, r, self.out_dim()));
        let mut weights = Array2::zeros((b, r));
        let mut out = Array2::zeros((b, self.out_dim()));
        for bi in 0..b {
            let reg = regions.slice(s![bi, .., ..]);
            let k = reg.dot(&self.key.value);
            let v = reg.dot(&self.value.value) + &self.value_bias.value;
            let scores: Array1<f64> = k.dot(&queries.row(bi)) * scale;
            let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exp = scores.mapv(|x| (x - max).exp());
            let w = &exp / exp.sum();
            out.row_mut(bi).assign(&w.dot(&v));
            weights.row_mut(bi).assign(&w);
            keys.slice_mut(s![bi, .., ..]).assign(&k);
            values.slice_mut(s![bi, .., ..]).assign(&v);
        }
        let cache = AttentionCache {
            regions: regions.clone(),
            text: text.clone(),
            queries,
            keys,
            values,
            weights,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients and returns the region gradient.
    pub fn backward(&mut self, cache: &AttentionCache, grad_out: &Array2<f64>) -> Array3<f64> {
        let (b, r, dv) = cache.regions.dim();
        let scale = 1.0 / (self.attn_dim() as f64).sqrt();
        let mut d_regions = Array3::zeros((b, r, dv));
        let mut d_queries = Array2::zeros(cache.queries.raw_dim());
        for bi in 0..b {
            let reg = cache.regions.slice(s![bi, .., ..]);
            let w = cache.weights.row(bi);
            let v = cache.values.slice(s![bi, .., ..]);
            let k = cache.keys.slice(s![bi, .., ..]);
            let q = cache.queries.row(bi);
            let g = grad_out.row(bi);

            // out = wᵀ V
            let d_values = w.insert_axis(Axis(1)).dot(&g.insert_axis(Axis(0)));
            let d_w = v.dot(&g);
            // softmax Jacobian
            let d_scores = &w * &(&d_w - w.dot(&d_w)) * scale;
            d_queries.row_mut(bi).assign(&k.t().dot(&d_scores));
            let d_keys = d_scores.insert_axis(Axis(1)).dot(&q.insert_axis(Axis(0)));

            self.key.grad += &reg.t().dot(&d_keys);
            self.value.grad += &reg.t().dot(&d_values);
            self.value_bias.grad += &d_values.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dr = d_keys.dot(&self.key.value.t()) + d_values.dot(&self.value.value.t());
            d_regions.slice_mut(s![bi, .., ..]).assign(&dr);
        }
        self.query.grad += &cache.text.t().dot(&d_queries);
        d_regions
    }
}

impl Module for AttentionPool {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "query"), &mut self.query);
        f(&join(prefix, "key"), &mut self.key);
        f(&join(prefix, "value"), &mut self.value);
        f(&join(prefix, "value_bias"), &mut self.value_bias);
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::relative_error;
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_set_scores_give_logistic_weights() {
        // d_a = 1, scores (1, 0).
        let pool = AttentionPool {
            query: Param::new(array![[1.0]]),
            key: Param::new(array![[1.0]]),
            value: Param::new(array![[1.0, 0.0]]),
            value_bias: Param::zeros(1, 2),
        };
        let regions = Array3::from_shape_vec((1, 2, 1), vec![1.0, 0.0]).unwrap();
        let (out, cache) = pool.forward(&regions, &array![[1.0]]);
        let e = std::f64::consts::E;
        assert!((cache.weights[(0, 0)] - e / (e + 1.0)).abs() < 1e-12);
        assert!((cache.weights[(0, 1)] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((cache.weights[(0, 0)] - 0.7311).abs() < 1e-4);
        assert!((out[(0, 0)] - e / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn identical_regions_pool_to_their_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pool = AttentionPool::new(5, 4, 3, 6, &mut rng);
        let v = array![0.3, -1.2, 2.0, 0.5];
        let regions = Array3::from_shape_fn((1, 7, 4), |(_, _, c)| v[c]);
        let text = Array2::from_shape_simple_fn((1, 5), || rng.random_range(-3.0..3.0));
        let (out, _) = pool.forward(&regions, &text);
        let expected = pool.project(&v.insert_axis(Axis(0)));
        assert!(out.iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pool = AttentionPool::new(5, 4, 2, 3, &mut rng);
        let regions = Array3::from_shape_simple_fn((2, 3, 4), || rng.random_range(-1.0..1.0));
        let text = Array2::from_shape_simple_fn((2, 5), || rng.random_range(-1.0..1.0));
        let up = Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0));
        let loss = |p: &AttentionPool, r: &Array3<f64>| (p.forward(r, &text).0 * &up).sum();
        let (_, cache) = pool.forward(&regions, &text);
        let d_regions = pool.backward(&cache, &up);
        let h = 1e-6;

        let numeric: Vec<f64> = (0..regions.len())
            .map(|i| {
                let (mut p, mut m) = (regions.clone(), regions.clone());
                p.as_slice_mut().unwrap()[i] += h;
                m.as_slice_mut().unwrap()[i] -= h;
                (loss(&pool, &p) - loss(&pool, &m)) / (2.0 * h)
            })
            .collect();
        assert!(relative_error(d_regions.as_slice().unwrap(), &numeric) < 1e-6);

        let mut snapshot = pool.clone();
        let mut names = Vec::new();
        snapshot.visit_params("", &mut |n, _| names.push(n.to_string()));
        for name in names {
            let mut analytic = Vec::new();
            pool.clone().visit_params("", &mut |n, p| {
                if n == name {
                    analytic = p.grad.iter().copied().collect();
                }
            });
            let numeric: Vec<f64> = (0..analytic.len())
                .map(|i| {
                    let bump = |delta: f64| {
                        let mut q = pool.clone();
                        q.visit_params("", &mut |n, p| {
                            if n == name {
                                p.value.as_slice_mut().unwrap()[i] += delta;
                            }
                        });
                        loss(&q, &regions)
                    };
                    (bump(h) - bump(-h)) / (2.0 * h)
                })
                .collect();
            assert!(relative_error(&analytic, &numeric) < 1e-6, "{name}");
        }
    }
}
