fn main() {
    std::process::exit(fbm_currents::experiment::cli_main());
}
