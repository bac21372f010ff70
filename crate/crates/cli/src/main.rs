fn main() {
    std::process::exit(bdflow_cli::run(std::env::args_os()));
}
