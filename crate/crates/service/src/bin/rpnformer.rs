fn main() {
    std::process::exit(rpnformer_service::cli::main_with(std::env::args_os()));
}
