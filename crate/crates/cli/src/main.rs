use std::process::ExitCode;

use smooth_traj_cli::CliError;

fn main() -> ExitCode {
    match smooth_traj_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Args(a) => {
                    let _ = a.print();
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
