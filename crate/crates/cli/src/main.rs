use clap::Parser;

use qnnlv_cli::config::SEED_ENV;
use qnnlv_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let seed = std::env::var(SEED_ENV).ok();
    match run(&cli, seed.as_deref()) {
        Ok(msg) => println!("{msg}"),
        Err(e) => {
            eprintln!("qnnlv: error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
