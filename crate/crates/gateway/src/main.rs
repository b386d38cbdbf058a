fn main() {
    std::process::exit(cornet_gateway::cli::run(std::env::args_os()));
}
