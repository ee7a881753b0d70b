fn main() {
    std::process::exit(udkf_cli::main_with_args(std::env::args_os()));
}
