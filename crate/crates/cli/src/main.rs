fn main() {
    std::process::exit(incmix::run(std::env::args_os()));
}
