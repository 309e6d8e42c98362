fn main() {
    std::process::exit(guitest_cli::main_with(std::env::args_os()));
}
