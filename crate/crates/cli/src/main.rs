fn main() {
    // Placeholder during bring-up; replaced by the full driver.
    eprintln!("powerenv: not yet wired");
    std::process::exit(1);
}
