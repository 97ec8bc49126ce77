fn main() {
    std::process::exit(sim_core::cli::run(std::env::args_os()));
}
