fn main() {
    std::process::exit(smdn::cli::run_cli(std::env::args_os()));
}
