use std::process::ExitCode;

use fedkm::RunConfig;

fn main() -> ExitCode {
    let cfg = match RunConfig::from_args(std::env::args()) {
        Ok(c) => c,
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<clap::Error>() {
                ce.exit();
            }
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match fedkm::run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
