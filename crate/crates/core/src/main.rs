fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(adaptive_lut::cli::cli_main(&args));
}
