//! Every pipeline command on the toy preset, in dependency order, writing into one run
//! directory. Prints each command's headline numbers and output files.
//!
//! `cargo run --release --example toy_pipeline -- [out_dir]`

use textless::harness::{run_pipeline, toy_config, Command, RunOptions};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/toy-example".into());
    let cfg = toy_config();
    let mut opts = RunOptions::new(&out);
    opts.max_items = Some(4);
    for cmd in [
        Command::Prep,
        Command::SchedPreview,
        Command::TrainEncoder,
        Command::Encode,
        Command::Lrrt,
        Command::TrainVocoder,
        Command::Synth,
        Command::EvalUnits,
        Command::EvalAudio,
        Command::EvalText,
    ] {
        let manifest = match run_pipeline(cmd, &cfg, &opts) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("{cmd}: {e}");
                std::process::exit(e.exit_code());
            }
        };
        println!("== {cmd} ({:.1}s)", manifest.wall_secs);
        for (k, v) in &manifest.summary {
            println!("   {k} = {v:.4}");
        }
        println!("   {} output file(s)", manifest.outputs.len());
    }
    println!("run directory: {out}");
}
