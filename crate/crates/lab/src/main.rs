fn main() {
    std::process::exit(valley_lab::cli::main_with(std::env::args_os()));
}
