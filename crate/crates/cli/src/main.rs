fn main() {
    std::process::exit(actvec_cli::run(std::env::args_os()));
}
