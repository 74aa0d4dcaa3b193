//! Every runnable example also runs as a test.

macro_rules! example {
    ($name:ident, $file:literal) => {
        #[allow(dead_code)]
        #[path = $file]
        mod $name;

        #[test]
        fn $name() {
            $name::run_example().unwrap();
        }
    };
}

example!(autodiff, "../examples/autodiff.rs");
example!(attention_identities, "../examples/attention_identities.rs");
example!(cost_model, "../examples/cost_model.rs");
example!(data_pipeline, "../examples/data_pipeline.rs");
example!(train_and_prune, "../examples/train_and_prune.rs");
example!(comparison, "../examples/comparison.rs");
example!(ablation, "../examples/ablation.rs");
