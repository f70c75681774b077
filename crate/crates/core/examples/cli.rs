//! Run configuration from JSON and the `simulate` command, as used by `ksdir`.
use ks_dirichlet::cli::{simulate, RunConfig};

fn main() -> ks_dirichlet::Result<()> {
    let dir = std::env::temp_dir().join("ks_cli_example");
    let text = format!(
        r#"{{"nu": 0.3, "u0": "kernel:1:even:0.2", "t_final": 40, "output_dir": {:?}}}"#,
        dir.display().to_string()
    );
    let path = std::env::temp_dir().join("ks_cli_example.json");
    std::fs::write(&path, text)?;
    let cfg = RunConfig::load(&path)?;
    println!("N = {}, h = {}, nu = {}", cfg.n, cfg.h, cfg.nu);
    let out = simulate(&cfg, true)?;
    println!("{}: {} snapshots, final norm {:.6}", out.path.display(), out.snapshots, out.final_norm);
    Ok(())
}
