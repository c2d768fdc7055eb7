use clap::Parser;
use pfmix_cli::{run, Cli, WORKERS_ENV};

fn main() {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool starts once");
            }
            _ => {
                eprintln!("error: {WORKERS_ENV} must be a positive integer, got '{v}'");
                std::process::exit(2);
            }
        }
    }
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
