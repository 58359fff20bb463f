fn main() {
    if let Err(e) = artkit::cli::run(std::env::args_os()) {
        println!("{}", serde_json::json!({"event": "error", "message": e.to_string()}));
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
