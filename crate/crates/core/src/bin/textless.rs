fn main() {
    std::process::exit(textless::harness::cli::main_with_args(std::env::args_os()));
}
