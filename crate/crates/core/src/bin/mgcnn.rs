fn main() {
    std::process::exit(mgcnn::cli::run(std::env::args_os()));
}
