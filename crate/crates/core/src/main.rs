fn main() {
    std::process::exit(oneloop_dse::cli::run(std::env::args_os()));
}
