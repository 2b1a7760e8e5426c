fn main() {
    std::process::exit(melsubband::cli::main_with_args(std::env::args_os()));
}
