fn main() {
    if let Err(e) = avtad::cli::run_args(std::env::args_os()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
