//! Pools a post's image regions with its text summary as the query and
//! prints the attention weights.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reintel::encoders::{attention_pool, RegionFeatures};
use reintel::nn::AttentionPool;

fn main() -> reintel::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (text_dim, region_dim, attn_dim, out_dim) = (4, 3, 2, 5);
    let mut pool = AttentionPool::new(text_dim, region_dim, attn_dim, out_dim, &mut rng);

    // Make region 2 the best match for this query.
    pool.query.value = Array2::from_shape_fn((text_dim, attn_dim), |(i, j)| if i == j { 1.0 } else { 0.0 });
    pool.key.value = Array2::from_shape_fn((region_dim, attn_dim), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let regions = RegionFeatures {
        values: ndarray::array![[0.1, 0.0, 0.3], [0.0, 0.2, 0.1], [3.0, 2.0, 0.0], [0.2, 0.1, 0.9]],
    };
    let summary = Array1::from(vec![1.0, 1.0, 0.0, 0.0]);

    let (pooled, weights) = attention_pool(&regions, &summary, &pool)?;
    for (r, w) in weights.iter().enumerate() {
        println!("region {r}: weight {w:.4}");
    }
    println!("weights sum to {:.6}", weights.sum());
    println!("pooled ({} wide): {:.4}", pooled.width(), pooled.0);
    Ok(())
}
