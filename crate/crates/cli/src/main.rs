use capdirac_cli::{run, Args};
use clap::Parser;

fn main() {
    let args = Args::parse();
    match run(&args) {
        Ok(o) => {
            println!("{}", o.report.display());
            println!("{}", o.csv.display());
        }
        Err(e) => {
            eprintln!("capdirac: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
