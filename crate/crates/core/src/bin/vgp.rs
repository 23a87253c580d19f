fn main() {
    std::process::exit(vgp::cli::run(std::env::args_os()).into());
}
