use clap::Parser;
use icpcast_cli::{exit_code, logging, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = logging::init(cli.command.out_dir()) {
        eprintln!("warning: no run log: {e:#}");
    }
    if let Err(e) = run(&cli) {
        log::error!("{e:#}");
        std::process::exit(exit_code(&e));
    }
}
