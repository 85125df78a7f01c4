fn main() {
    std::process::exit(onerestore::pipeline::cli::run(std::env::args_os()));
}
