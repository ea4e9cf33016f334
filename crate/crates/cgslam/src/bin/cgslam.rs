fn main() {
    std::process::exit(cgslam::cli::main());
}
