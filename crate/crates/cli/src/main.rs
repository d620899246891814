fn main() {
    std::process::exit(lawrob_cli::main_with_args(std::env::args_os()));
}
