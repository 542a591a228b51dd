fn main() {
    std::process::exit(trapdex::cli::run(std::env::args_os()));
}
