fn main() {
    std::process::exit(idgrid::cli::run(std::env::args_os()));
}
