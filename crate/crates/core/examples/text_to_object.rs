//! The whole pipeline in miniature: corpus, shape prior, part targets,
//! transformer, then text to an articulated object.
//!
//! Steps are cut far below the desk profile so this finishes in about a
//! minute; expect rough objects.
//!
//! cargo run --example text_to_object -- "a cabinet with two drawers"

use artkit::artformer::{examples, train_artformer, ArtFormer};
use artkit::artic::to_json;
use artkit::cache::corpus_targets;
use artkit::dataset::{generate_corpus, split_ids, Corpus};
use artkit::pipeline::{generate, Profile};
use artkit::prior::{train_prior, PartRecord, ShapePrior};
use artkit_tensor::Rng;

fn main() -> artkit::Result<()> {
    let text = std::env::args().nth(1).unwrap_or_else(|| "a cabinet with two drawers".into());
    let mut profile = Profile::desk();
    profile.prior_train.vae_steps = 200;
    profile.prior_train.diffusion_steps = 200;
    profile.artformer_train.steps = 200;

    let mut corpus = Corpus::from_objects(generate_corpus(40, 0)?, 0);
    let ids: Vec<String> = corpus.objects.iter().map(|o| o.id.clone()).collect();
    corpus.manifest.splits = split_ids(&ids, profile.split, 0)?;

    let mut prior = ShapePrior::new(&profile.prior, 0)?;
    let parts = PartRecord::from_split(&corpus, "train")?;
    train_prior(&mut prior, &parts, &profile.prior_train, &mut Rng::seed(0), &mut |_| {})?;

    let objects: Vec<_> = corpus.objects.iter().collect();
    let targets = corpus_targets(&prior, &objects, 0)?;
    let train = examples(&corpus.split("train")?, &targets)?;
    let p = &prior.cfg;
    let mut model = ArtFormer::new(&profile.artformer, p.d_z, p.c_s, p.codebook_rows, 0)?;
    train_artformer(&mut model, &train, &profile.artformer_train, &mut Rng::seed(0), &mut |l| println!("{l:?}"))?;

    let decoded = generate(&model, &prior, &text, &mut Rng::seed(1))?;
    let (slide, turn) = decoded.tree.count_root_joints();
    println!("\"{text}\": {} parts, {slide} prismatic and {turn} revolute on the root", decoded.tree.len());
    println!("{}", to_json(&decoded.tree));
    Ok(())
}
