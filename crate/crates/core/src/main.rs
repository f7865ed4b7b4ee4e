fn main() {
    std::process::exit(nsdde::cli::run(std::env::args_os()));
}
