use clap::Parser;
use fked::cli::Args;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let result = args.resolve().and_then(|cfg| fked::run(args.command, &cfg));
    match result {
        Ok(files) => {
            for f in files {
                log::debug!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
