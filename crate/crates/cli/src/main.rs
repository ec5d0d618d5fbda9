use clap::Parser;
use sscsr_cli::{run, RunSpec};

fn main() {
    let spec = RunSpec::parse();
    let mut stdout = std::io::stdout();
    if let Err(e) = run(&spec, &mut stdout) {
        eprintln!("sscsr: {e}");
        std::process::exit(e.exit_code());
    }
}
