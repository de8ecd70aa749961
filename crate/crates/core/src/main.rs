fn main() {
    std::process::exit(osda::cli::main_with(std::env::args_os()));
}
