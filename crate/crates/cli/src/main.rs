fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    std::process::exit(tapstroop_cli::run(std::env::args_os(), &mut out, &mut err));
}
