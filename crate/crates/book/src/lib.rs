//! The chapters of `book/` as modules, so `cargo test` compiles and runs
//! every Rust block in the guide.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub mod $name {}
    };
}

chapter!(introduction, "introduction.md");
chapter!(model, "model.md");
chapter!(inference, "inference.md");
chapter!(acquisition, "acquisition.md");
chapter!(optimizer, "optimizer.md");
chapter!(test_functions, "test-functions.md");
chapter!(fractal, "fractal.md");
chapter!(benchmarks, "benchmarks.md");
chapter!(service, "service.md");
