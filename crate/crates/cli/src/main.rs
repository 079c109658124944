fn main() {
    std::process::exit(flowcps_cli::main_with_args(std::env::args_os()));
}
