fn main() {
    std::process::exit(vbsde_cli::run(std::env::args_os()));
}
