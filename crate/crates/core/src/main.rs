use clap::Parser;

fn main() {
    let cli = hlattice::cli::Cli::parse();
    let mut out = std::io::stdout();
    match hlattice::cli::execute(cli, &mut out) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
