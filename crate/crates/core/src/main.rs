fn main() {
    std::process::exit(latentflow::cli::dispatch(std::env::args_os()));
}
