fn main() {
    std::process::exit(timbre_cli::main_with(std::env::args_os()));
}
