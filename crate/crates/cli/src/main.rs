use clap::Parser;

use otws_cli::args::Cli;
use otws_cli::{commands, init_thread_pool};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let result = init_thread_pool().and_then(|()| commands::run(cli.command));
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
