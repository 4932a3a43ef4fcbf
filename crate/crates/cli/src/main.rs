use clap::Parser;
use cmc_hyp::config::Cli;
use cmc_hyp::run::{exit_code, run};

fn main() {
    let cli = Cli::parse();
    let cfg = match cli.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.class());
            std::process::exit(exit_code(&e));
        }
    };
    let out = run(&cfg);
    if out.code != 0 {
        let msg = out.summary.get("error").map(|e| e["message"].to_string()).unwrap_or_else(|| "checks failed".into());
        eprintln!("{}: {msg}", out.summary["status"].as_str().unwrap_or("error"));
    }
    println!("{}", cfg.out.join("summary.json").display());
    std::process::exit(out.code);
}
