fn main() {
    std::process::exit(tiltweigh::cli::run_from_args(std::env::args_os()));
}
