use clap::Parser;
use snstitch::cli::{run, Cli, SEED_ENV};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let seed = std::env::var(SEED_ENV).ok();
    match run(&cli, seed.as_deref()) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
