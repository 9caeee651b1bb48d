fn main() {
    std::process::exit(lnprobe::cli::dispatch(std::env::args_os()));
}
