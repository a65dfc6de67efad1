fn main() {
    std::process::exit(rcmlab::cli::main_with_args(std::env::args_os()));
}
