fn main() {
    std::process::exit(sgdgap::cli::run(std::env::args_os()));
}
