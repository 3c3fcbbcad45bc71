fn main() {
    std::process::exit(sfunnel_cli::run(std::env::args_os()));
}
