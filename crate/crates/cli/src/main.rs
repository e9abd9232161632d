use std::process::ExitCode;

use clap::Parser;
use ercmix_cli::{run, Args, EXIT_ERROR};

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let outcome = args.into_manifest().and_then(|m| {
        let to_stdout = m.out.is_none();
        run(&m).map(|o| (o, to_stdout))
    });
    match outcome {
        Ok((o, to_stdout)) => {
            if to_stdout {
                print!("{}", o.report);
            }
            if o.code != 0 {
                eprintln!("ercmix: existence preconditions not met");
            }
            ExitCode::from(o.code as u8)
        }
        Err(e) => {
            eprintln!("ercmix: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
