use std::process::ExitCode;

use clap::Parser;
use marginalia_cli::{run, summary_table, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(outcome) => {
            print!("{}", summary_table(&outcome.rows));
            println!("report written to {}", args.out.display());
            if outcome.kept {
                println!("session {} kept", outcome.session_id);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
