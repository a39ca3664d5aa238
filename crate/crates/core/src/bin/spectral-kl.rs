fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPECTRAL_KL_LOG", "warn")).init();
    std::process::exit(spectral_kl::cli::run(std::env::args_os()));
}
