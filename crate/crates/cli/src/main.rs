use clap::Parser;

fn main() {
    std::process::exit(tg_cli::dispatch(tg_cli::Cli::parse()));
}
