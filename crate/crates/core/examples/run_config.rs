// Layers a training configuration: built-in defaults, then a JSON file,
// then command-line style overrides. Misspelled keys are rejected with a
// suggestion.

use avalign::clip::TrainConfig;
use avalign::config::{parse_override, resolve_config};

pub fn run_example() -> avalign::Result<()> {
    let dir = std::env::temp_dir().join(format!("avalign-config-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| avalign::Error::io(&dir, e))?;
    let file = dir.join("train.json");
    std::fs::write(&file, r#"{"epochs": 40, "lr": 0.0005}"#).map_err(|e| avalign::Error::io(&file, e))?;

    let flags = vec![parse_override("lr=0.0001")?];
    let cfg: TrainConfig = resolve_config(&TrainConfig::default(), Some(&file), &flags)?;
    println!("epochs {} (file), lr {} (flag), batch {} (default)", cfg.epochs, cfg.lr, cfg.batch_size);

    let typo = vec![parse_override("learning_rate=0.1")?];
    match resolve_config(&TrainConfig::default(), None, &typo) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("unknown keys are rejected"),
    }

    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

#[allow(dead_code)]
fn main() -> avalign::Result<()> {
    run_example()
}
