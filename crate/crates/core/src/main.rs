fn main() {
    std::process::exit(viewacq::cli::main_with_args(std::env::args_os()));
}
