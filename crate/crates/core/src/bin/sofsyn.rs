fn main() {
    std::process::exit(sofsyn_core::cli::main_with_args(std::env::args_os()));
}
