fn main() {
    std::process::exit(pose6d::cli::main_with_args(std::env::args_os()));
}
