fn main() {
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = sspose_cli::run(std::env::args_os(), &mut stdout) {
        eprintln!("sspose: {e}");
        std::process::exit(e.exit_code());
    }
}
