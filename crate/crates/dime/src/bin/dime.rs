fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn,dime=info")).init();
    std::process::exit(dime::cli::run(std::env::args_os()));
}
