//! `mfn synth`: write a deterministic synthetic tile pack.

use std::fmt::Write as _;

use mfn_core::data::synth::synth_scene;
use mfn_core::init::derive_seed;

use crate::config::RunConfig;
use crate::dataset::MANIFEST_NAME;
use crate::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.size % 32 != 0 || cfg.size == 0 {
        return Err(CliError::Config(format!(
            "size {} is not divisible by 32",
            cfg.size
        )));
    }
    if cfg.n_tiles == 0 {
        return Err(CliError::Config("n_tiles must be >= 1".into()));
    }
    std::fs::create_dir_all(&cfg.tiles)
        .map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;

    let mut manifest = String::new();
    writeln!(manifest, "# synthetic tile pack").expect("string write");
    writeln!(manifest, "seed = {}", cfg.seed).expect("string write");
    writeln!(manifest, "size = {}", cfg.size).expect("string write");
    writeln!(manifest, "tiles = {}", cfg.n_tiles).expect("string write");
    for i in 0..cfg.n_tiles {
        let scene = synth_scene(derive_seed(cfg.seed, i as u64), cfg.size, cfg.k)?;
        let name = format!("tile_{i:03}");
        let files = [
            (format!("{name}_optical.mrt"), &scene.optical),
            (format!("{name}_composite.mrt"), &scene.composite),
            (format!("{name}_label.mrt"), &scene.label),
        ];
        for (file, tile) in &files {
            tile.write(&cfg.tiles.join(file))?;
        }
        writeln!(
            manifest,
            "{name} {} {} {}",
            files[0].0, files[1].0, files[2].0
        )
        .expect("string write");
    }
    std::fs::write(cfg.tiles.join(MANIFEST_NAME), manifest)
        .map_err(|e| CliError::Run(mfn_core::Error::Io(e)))?;
    println!(
        "wrote {} tile triples to {}",
        cfg.n_tiles,
        cfg.tiles.display()
    );
    Ok(())
}
