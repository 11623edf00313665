use clap::Parser;

fn main() {
    aad_core::alloc::tune_allocator();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = aad_cli::Cli::parse();
    if let Err(e) = aad_cli::run(cli) {
        log::error!("{e}");
        std::process::exit(e.exit_code());
    }
}
