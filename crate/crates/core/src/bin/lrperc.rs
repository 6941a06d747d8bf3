fn main() {
    std::process::exit(lrperc::cli::main_with_args(std::env::args_os()));
}
