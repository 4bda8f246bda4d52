fn main() {
    std::process::exit(crossfit::cli::main_with(std::env::args_os()));
}
