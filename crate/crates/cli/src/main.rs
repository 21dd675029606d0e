fn main() {
    std::process::exit(hjbdual_cli::run(std::env::args_os()));
}
