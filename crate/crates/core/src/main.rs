fn main() {
    std::process::exit(refmot::cli::run(std::env::args_os()));
}
