use clap::Parser;
use pairalign_cli::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => println!("{}", serde_json::to_string_pretty(&summary).expect("json")),
        Err(e) => {
            let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            let err = serde_json::json!({ "error": e.to_string(), "causes": causes });
            eprintln!("{err}");
            std::process::exit(1);
        }
    }
}
