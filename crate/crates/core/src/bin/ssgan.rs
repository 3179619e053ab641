fn main() {
    std::process::exit(ssgan::cli::main_with_args(std::env::args_os()));
}
