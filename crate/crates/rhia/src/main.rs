fn main() {
    let code = rhia::cli::run(std::env::args_os());
    std::process::exit(code);
}
