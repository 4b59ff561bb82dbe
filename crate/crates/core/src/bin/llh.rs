use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = llh::cli::Cli::parse();
    if let Err(e) = llh::cli::run(&cli) {
        eprintln!("llh {}: {e}", cli.command.name());
        std::process::exit(e.exit_code());
    }
}
