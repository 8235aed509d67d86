fn main() {
    std::process::exit(sparfa_cli::run(std::env::args_os()));
}
