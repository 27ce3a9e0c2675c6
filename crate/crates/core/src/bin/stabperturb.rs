use clap::Parser;
use stabperturb::cli::{configure_threads, execute, Cli};

fn main() {
    let cli = Cli::parse();
    configure_threads();
    match execute(&cli.command) {
        Ok(bundle) => {
            let verdict = serde_json::to_value(bundle.outcome).unwrap_or_default();
            println!("{} {}", bundle.command, verdict.as_str().unwrap_or("?"));
            std::process::exit(bundle.outcome.exit_code());
        }
        Err(e) => {
            eprintln!("error: {}: {e}", e.kind());
            std::process::exit(1);
        }
    }
}
