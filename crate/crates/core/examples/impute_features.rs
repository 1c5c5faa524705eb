//! Imputes a small table with mean and chained-equation imputation, then
//! builds and standardizes the metadata matrix of a few posts.

use ndarray::array;
use reintel::dataset::{Label, RawPost};
use reintel::features::{build_feature_matrix, compute_user_histories, standardize, FeatureConfig};
use reintel::impute::{mean_impute, mice_impute, MiceConfig};
use reintel::text::text_statistics;

fn main() -> reintel::Result<()> {
    // Column 1 is exactly 2 * column 0 + 1.
    let table = array![
        [Some(0.0), Some(1.0)],
        [Some(1.0), Some(3.0)],
        [Some(2.0), Some(5.0)],
        [Some(4.0), None],
        [Some(5.0), Some(11.0)],
    ];
    let col: Vec<Option<f64>> = table.column(1).to_vec();
    println!("mean imputation of y at x=4: {}", mean_impute(&col)[3]);
    let mice = mice_impute(table.view(), &MiceConfig::default())?;
    println!("MICE imputation of y at x=4: {:.6}\n", mice[(3, 1)]);

    let mut posts = vec![
        RawPost::new("p1", "alice", "tin #hot http://a.vn !!"),
        RawPost::new("p2", "bob", "có ai biết không??"),
        RawPost::new("p3", "alice", "chia sẻ"),
    ];
    posts[0].num_likes = Some(120);
    posts[0].timestamp = Some(1_600_000_000);
    posts[0].image_paths = vec!["a.png".into()];
    posts[0].label = Some(Label::Unreliable);
    posts[1].num_likes = Some(4);
    posts[1].label = Some(Label::Reliable);
    posts[2].timestamp = Some(1_600_086_400);
    posts[2].num_shares = Some(2);
    posts[2].label = Some(Label::Reliable);

    let histories = compute_user_histories(&posts)?;
    let stats: Vec<_> = posts.iter().map(|p| text_statistics(&p.text)).collect();
    let raw = build_feature_matrix(&posts, &histories, &stats, &FeatureConfig::default())?;
    let scaled = standardize(&raw, true)?;
    for (j, name) in raw.column_names.iter().enumerate() {
        println!(
            "{name:>18}: raw {:?} -> {:?}",
            raw.values.column(j).to_vec(),
            scaled.values.column(j).iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    Ok(())
}
