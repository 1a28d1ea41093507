fn main() {
    std::process::exit(kac_core::cli::run(std::env::args_os()));
}
