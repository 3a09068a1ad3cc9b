use std::io::Write;

use clap::Parser;
use hjlab_cli::{run, RunConfig};

fn main() {
    let rc = RunConfig::parse();
    let code = match run(&rc) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            // A closed pipe must not turn a finished run into a panic.
            for line in &out.stdout {
                let _ = writeln!(stdout, "{line}");
            }
            let _ = writeln!(stdout, "{}", out.summary);
            let _ = writeln!(stdout, "report: {}", out.report_path.display());
            out.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
