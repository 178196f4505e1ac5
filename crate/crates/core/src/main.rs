use stopfinder::cli::run_cli;

fn main() {
    let status = run_cli(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(status.code());
}
