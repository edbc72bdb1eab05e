fn main() {
    std::process::exit(uti_convlstm::cli::run(std::env::args_os()));
}
