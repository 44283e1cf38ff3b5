fn main() {
    std::process::exit(spacetime_flow::cli::cli_run(std::env::args_os()));
}
