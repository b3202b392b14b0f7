fn main() {
    std::process::exit(inventropy::cli::main_with(std::env::args_os()));
}
