fn main() {
    std::process::exit(rbi::cli::dispatch(std::env::args_os()));
}
