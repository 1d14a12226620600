use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = grade::cli::Cli::parse();
    match grade::cli::run(cli, &mut std::io::stdout().lock()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
