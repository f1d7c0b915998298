fn main() {
    std::process::exit(tactile_mpc::harness::cli::run(std::env::args_os()));
}
