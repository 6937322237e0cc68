fn main() {
    std::process::exit(vkrod_cli::run(std::env::args_os()));
}
