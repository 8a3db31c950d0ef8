fn main() {
    std::process::exit(ascm::pipeline::cli::run(std::env::args_os()));
}
