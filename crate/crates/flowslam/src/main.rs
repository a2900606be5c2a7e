fn main() {
    std::process::exit(flowslam::cli::main_with_args(std::env::args_os()));
}
