fn main() {
    std::process::exit(pulsefront::cli::dispatch(std::env::args_os()));
}
