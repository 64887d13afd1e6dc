use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = certdr::cli::configure_threads().and_then(|()| certdr::cli::run(std::env::args_os(), &mut out));
    let _ = out.flush();
    if let Err(e) = result {
        eprintln!("certdr: {e}");
        std::process::exit(e.exit_code());
    }
}
