fn main() {
    std::process::exit(amcnn::cli::main_with(std::env::args_os()));
}
