fn main() {
    std::process::exit(ctacl::cli::main_with_args(std::env::args_os()));
}
