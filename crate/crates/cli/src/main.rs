fn main() {
    std::process::exit(dabc_cli::run(std::env::args_os()));
}
