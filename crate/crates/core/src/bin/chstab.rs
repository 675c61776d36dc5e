use clap::Parser;

fn main() {
    let args = chstab::cli::Args::parse();
    std::process::exit(chstab::cli::execute(&args));
}
