//! Writes one procedural object as URDF with a mesh per link.
//!
//! cargo run --example export_urdf -- [out_dir]

use std::path::PathBuf;

use artkit::artic::export_urdf;
use artkit::dataset::corpus_object;
use artkit::metrics::ObjectGeometry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "artkit-urdf".into()));
    std::fs::create_dir_all(&out)?;
    let obj = corpus_object(0, 3)?;
    let geo = ObjectGeometry::from_corpus(&obj);

    let mut meshes = Vec::new();
    for (i, m) in geo.part_meshes(48)?.iter().enumerate() {
        let file = format!("part_{i}.obj");
        m.write_obj(out.join(&file))?;
        meshes.push(Some(file));
    }
    let urdf = export_urdf(&obj.tree, &obj.id, &meshes)?;
    let path = out.join(format!("{}.urdf", obj.id));
    std::fs::write(&path, urdf)?;
    println!("{:?} with {} links -> {}", obj.category, obj.tree.len(), path.display());
    Ok(())
}
