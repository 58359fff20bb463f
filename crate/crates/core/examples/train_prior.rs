//! Trains the part shape prior on a handful of objects, then samples a door
//! and writes it as OBJ.
//!
//! cargo run --example train_prior -- [out.obj]

use artkit::dataset::{generate_corpus, Corpus};
use artkit::pipeline::Profile;
use artkit::prior::{train_prior, PartRecord, ShapePrior, TABLES};
use artkit_tensor::Rng;

fn main() -> artkit::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "door.obj".into());
    let corpus = Corpus::from_objects(generate_corpus(8, 0)?, 0);
    let all: Vec<_> = corpus.objects.iter().map(|o| o.id.clone()).collect();
    let mut corpus = corpus;
    corpus.manifest.splits.train = all;
    let parts = PartRecord::from_split(&corpus, "train")?;

    let profile = Profile::desk();
    let mut tc = profile.prior_train.clone();
    tc.vae_steps = 150;
    tc.diffusion_steps = 150;
    tc.log_every = 50;
    let mut prior = ShapePrior::new(&profile.prior, 0)?;
    train_prior(&mut prior, &parts, &tc, &mut Rng::seed(0), &mut |l| println!("{l:?}"))?;

    let c_s = prior.labels.get("door").cloned().unwrap_or_else(|| vec![0.0; prior.cfg.c_s]);
    let logits = vec![0.0; TABLES * prior.cfg.codebook_rows];
    let bbox = [-0.02, -0.4, -0.6, 0.02, 0.4, 0.6];
    let sample = prior.sample_part_geometry(&logits, &c_s, &bbox, 32, 1.0, &mut Rng::seed(1))?;
    match sample.mesh {
        Some(m) => {
            m.write_obj(&out)?;
            println!("wrote {out}: {} vertices, {} triangles", m.vertices.len(), m.triangles.len());
        }
        None => println!("sampled field has no surface"),
    }
    Ok(())
}
