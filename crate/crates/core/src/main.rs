fn main() {
    std::process::exit(gasnet::cli::run_cli(std::env::args_os()));
}
