//! Regenerates the fixture graph files under ./fixtures/.

fn main() {
    std::fs::create_dir_all("fixtures").unwrap();
    for name in identest::theorems::fixtures::FIXTURE_NAMES {
        let text = identest::theorems::fixtures::fixture_text(name).unwrap();
        let path = format!("fixtures/{name}.txt");
        std::fs::write(&path, text).unwrap();
        println!("wrote {path}");
    }
}
