fn main() {
    std::process::exit(hydrozone_cli::cli::main_with(std::env::args_os()));
}
