fn main() {
    std::process::exit(brox::cli::cli_main(std::env::args_os()));
}
