//! Scores one set of corpus objects against another: interpenetration per
//! object, then MMD, COV and 1-NNA over instantiation distance.

use artkit::dataset::generate_corpus;
use artkit::metrics::{id_matrices, id_signature, por, set_metrics, EvalConfig, ObjectGeometry};

fn main() -> artkit::Result<()> {
    let cfg = EvalConfig {
        surface_samples: 512,
        ..EvalConfig::default()
    };
    let gen: Vec<_> = generate_corpus(8, 1)?.iter().map(ObjectGeometry::from_corpus).collect();
    let reference: Vec<_> = generate_corpus(8, 2)?.iter().map(ObjectGeometry::from_corpus).collect();

    for g in &gen {
        println!("{:<12} POR {:.4}", g.name, por(g, &cfg)?);
    }
    let sig = |set: &[ObjectGeometry]| set.iter().map(|o| id_signature(o, &cfg)).collect::<artkit::Result<Vec<_>>>();
    let m = set_metrics(&id_matrices(&sig(&gen)?, &sig(&reference)?));
    println!("MMD {:.4}  COV {:.3}  1-NNA {:.3}", m.mmd, m.cov, m.nna);
    Ok(())
}
