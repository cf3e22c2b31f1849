fn main() {
    let code = compliance_cli::run_command(std::env::args().skip(1));
    std::process::exit(code);
}
