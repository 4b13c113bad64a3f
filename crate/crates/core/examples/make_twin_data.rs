//! Regenerates the bundled twin inputs in `data/`.
//!
//! cargo run --release --example make_twin_data

use std::path::Path;

use gsrecon::fem::StiffnessSystem;
use gsrecon::twin::{manufacture, synthesize_measurements, twin_mesh, TwinSpec};

fn main() -> gsrecon::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    std::fs::create_dir_all(&dir).expect("data directory");
    let mesh = twin_mesh();
    let spec = TwinSpec::standard(&mesh);
    let system = StiffnessSystem::new(&mesh)?;
    let truth = manufacture(&mesh, &system, &spec)?;
    let meas = synthesize_measurements(&mesh, &truth, &spec)?;
    let files = [
        ("twin_mesh.txt", mesh.to_text()),
        ("twin_spec.json", spec.to_json()),
        ("twin_measurements.json", meas.to_json()),
        ("twin_config.json", spec.config().to_json()),
    ];
    for (name, text) in files {
        std::fs::write(dir.join(name), text).expect("write data file");
        println!("wrote data/{name}");
    }
    Ok(())
}
