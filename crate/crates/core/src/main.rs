fn main() {
    std::process::exit(pourplan::cli::run_cli(std::env::args_os()));
}
