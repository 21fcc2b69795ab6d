fn main() {
    std::process::exit(staffnet_cli::main_with_args(std::env::args_os()));
}
