fn main() { std::process::exit(retro::cli::main()); }
