fn main() {
    std::process::exit(smtsim::cli::main_with_args(std::env::args_os()));
}
