//! Normalizes a few posts and prints their raw-text statistics.
//!
//! cargo run --example preprocess_text -- "Coooool :) ncov!!!"

use reintel::text::{text_statistics, Preprocessor};

fn main() -> reintel::Result<()> {
    let mut posts: Vec<String> = std::env::args().skip(1).collect();
    if posts.is_empty() {
        posts = vec![
            "Coooool :) tin ncov mới nhất!!!!".into(),
            "buồn quá :'( #covid19 http://tin.vn/a".into(),
            "s.áthại thật sựuuuu =]]".into(),
        ];
    }
    let pre = Preprocessor::default();
    for (i, raw) in posts.iter().enumerate() {
        let clean = pre.preprocess(&format!("arg{i}"), raw)?;
        let stats = text_statistics(raw);
        println!("raw:   {raw}");
        println!("clean: {clean}");
        println!(
            "stats: hashtags={} urls={} chars={} words={} ?={} !={}\n",
            stats.n_hashtags, stats.n_urls, stats.n_chars, stats.n_words, stats.n_question_marks, stats.n_exclaim_marks
        );
    }
    Ok(())
}
