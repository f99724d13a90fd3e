fn main() {
    std::process::exit(sacbf_core::cli::run_cli(std::env::args_os()));
}
