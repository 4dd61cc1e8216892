use conpro::cli::{self, CliError};

fn main() {
    let env_seed = std::env::var(cli::SEED_ENV).ok();
    match cli::run(std::env::args_os(), env_seed.as_deref()) {
        Ok(_) => {}
        Err(CliError::Usage(e)) => e.exit(),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
