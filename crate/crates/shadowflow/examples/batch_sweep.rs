//! Deterministic batch over jittered seeds of the existence scenario,
//! aggregated into one CSV.

use shadowflow::config::Preset;
use shadowflow::runner;

fn main() -> shadowflow::Result<()> {
    let tmp = std::env::temp_dir().join("shadowflow-batch-example");
    let cfg_dir = tmp.join("configs");
    let out_dir = tmp.join("out");
    std::fs::create_dir_all(&cfg_dir)?;

    for seed in 1..=10u64 {
        let cfg = runner::config_from_preset(Preset::Existence, 6, seed)?;
        std::fs::write(
            cfg_dir.join(format!("existence-s{seed:04}.toml")),
            cfg.to_toml()?,
        )?;
    }

    let outcome = runner::batch(&[cfg_dir], 4, &out_dir)?;
    println!(
        "ran {} configs (exit {}), aggregate at {}",
        outcome.rows.len(),
        outcome.exit_code,
        outcome.csv_path.display()
    );
    let csv = std::fs::read_to_string(&outcome.csv_path)?;
    for line in csv.lines() {
        let cols: Vec<&str> = line.split(',').take(5).collect();
        println!("{}", cols.join(","));
    }

    let report = runner::report(&out_dir)?;
    println!("\n{}", report.text);
    Ok(())
}
