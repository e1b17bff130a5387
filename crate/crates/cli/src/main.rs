fn main() {
    std::process::exit(femeig_cli::main_with(std::env::args_os()));
}
