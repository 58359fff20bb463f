//! Builds a small procedural corpus and prints what went into it.
//!
//! cargo run --example build_dataset -- [dir] [count]

use std::collections::BTreeMap;
use std::path::PathBuf;

use artkit::dataset::{build_dataset, Corpus};

fn main() -> artkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "artkit-example-data".into()));
    let count = args.next().and_then(|c| c.parse().ok()).unwrap_or(24);

    let manifest = build_dataset(&dir, count, [0.8, 0.1, 0.1], 0)?;
    println!(
        "{} objects in {} (train {}, val {}, test {})",
        manifest.count,
        dir.display(),
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len()
    );

    let corpus = Corpus::load(&dir)?;
    let mut per_category = BTreeMap::new();
    for o in &corpus.objects {
        *per_category.entry(format!("{:?}", o.category)).or_insert(0) += 1;
    }
    for (c, n) in &per_category {
        println!("  {c:<10} {n}");
    }

    let o = &corpus.objects[0];
    println!("{}: {} parts", o.id, o.tree.len());
    for t in &o.texts {
        println!("  \"{t}\"");
    }
    Ok(())
}
