fn main() {
    std::process::exit(hypolang::cli::main_with_args(std::env::args_os()));
}
