fn main() { std::process::exit(docformer::cli::run(std::env::args_os())) }
