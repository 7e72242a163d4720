fn main() {
    std::process::exit(backstep_core::cli::run(std::env::args_os()));
}
