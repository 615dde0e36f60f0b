fn main() {
    let code = coop_learn::cli::run_from(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
