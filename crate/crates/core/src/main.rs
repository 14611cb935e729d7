fn main() {
    std::process::exit(fcdsae::cli::main_with_args(std::env::args_os()));
}
