fn main() {
    std::process::exit(quenched_dft::cli::run(std::env::args_os()));
}
