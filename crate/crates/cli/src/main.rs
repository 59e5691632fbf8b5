use clap::Parser;
use goalrepr_cli::{run, Cli, EXIT_OK};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli, &mut std::io::stderr()) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    };
    std::process::exit(code);
}
