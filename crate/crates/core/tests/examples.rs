macro_rules! example {
    ($name:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }
    };
}

example!(certificate, "certificate.rs");
example!(coupling, "coupling.rs");
example!(complexity, "complexity.rs");
example!(datagen, "datagen.rs");
example!(run_config, "run_config.rs");
example!(scaffold_vs_fedavg, "scaffold_vs_fedavg.rs");

#[test]
fn certificate_example_runs() {
    certificate::run().unwrap();
}

#[test]
fn coupling_example_runs() {
    coupling::run().unwrap();
}

#[test]
fn complexity_example_runs() {
    complexity::run().unwrap();
}

#[test]
fn datagen_example_runs() {
    datagen::run().unwrap();
}

#[test]
fn run_config_example_runs() {
    run_config::run().unwrap();
}

#[test]
fn scaffold_vs_fedavg_example_runs() {
    scaffold_vs_fedavg::run().unwrap();
}
