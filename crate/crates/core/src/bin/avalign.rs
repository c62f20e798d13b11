fn main() {
    let verbosity = std::env::args()
        .filter(|a| a.len() > 1 && a.starts_with('-') && a[1..].chars().all(|c| c == 'v'))
        .map(|a| a.matches('v').count())
        .sum::<usize>();
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    std::process::exit(avalign::cli::run(std::env::args_os()));
}
