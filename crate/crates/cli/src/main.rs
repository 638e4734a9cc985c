use clap::Parser;
use fhrd_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli).and_then(|out| {
        for w in &out.warnings {
            eprintln!("warning: {w}");
        }
        out.emit()
    }) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
