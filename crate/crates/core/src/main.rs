fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    histobench_core::retain_freed_memory();
    std::process::exit(histobench_core::cli::run(std::env::args_os()));
}
