fn main() {
    std::process::exit(affect_core::cli::dispatch(std::env::args_os()));
}
