fn main() {
    std::process::exit(linsav::harness::cli::run_cli(std::env::args_os()));
}
