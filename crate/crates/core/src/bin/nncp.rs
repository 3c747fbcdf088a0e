fn main() {
    std::process::exit(nncp::cli::run_cli(std::env::args_os()));
}
