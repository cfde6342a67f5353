fn main() {
    std::process::exit(dpre::cli::dispatch(std::env::args_os()));
}
