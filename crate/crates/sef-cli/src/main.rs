fn main() {
    std::process::exit(sef_cli::cli_main(std::env::args()));
}
