fn main() {
    std::process::exit(repocompose::cli::run(std::env::args_os()));
}
